//! Reference frames, rotations, and the Earth model.
//!
//! Conventions used throughout the crate:
//! - navigation frame is local NED, body frame is forward-right-down
//! - `Dcm` holds `C_b^n`, rotating body vectors into NED
//! - angles are radians; degrees only appear at file/CLI boundaries
//! - height rate is `-v_D`

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::{Error, Result};

pub type NedVelocity = Vector3<f64>;

/// Skew-symmetric cross-product matrix: `skew(v) * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rotation matrix `exp(skew(phi))` (Rodrigues).
pub fn rotation_vector_to_matrix(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    let k = skew(phi);
    if angle < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation vector of a rotation matrix (inverse of [`rotation_vector_to_matrix`]).
pub fn matrix_to_rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_angle = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    let v = vee(r);
    if angle < 1e-8 {
        return v;
    }
    v * (angle / angle.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    pub lat: f64,
    pub lon: f64,
    pub h: f64,
}

impl GeodeticPosition {
    pub fn new(lat: f64, lon: f64, h: f64) -> Self {
        Self { lat, lon, h }
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, h: f64) -> Self {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), h)
    }

    /// Clamp latitude to the poles and wrap longitude into (-pi, pi].
    pub fn normalized(mut self) -> Self {
        self.lat = self.lat.clamp(-FRAC_PI_2, FRAC_PI_2);
        self.lon = wrap_pi(self.lon);
        self
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_pi(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }
}

/// Body-to-navigation direction cosine matrix `C_b^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(Matrix3<f64>);

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Matrix3::identity())
    }

    /// Wrap a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Dcm(m)
    }

    /// Z-Y-X (yaw, pitch, roll) rotation sequence.
    pub fn from_euler(e: EulerAngles) -> Self {
        let (sr, cr) = e.roll.sin_cos();
        let (sp, cp) = e.pitch.sin_cos();
        let (sy, cy) = e.yaw.sin_cos();
        Dcm(Matrix3::new(
            cp * cy,
            -cr * sy + sr * sp * cy,
            sr * sy + cr * sp * cy,
            cp * sy,
            cr * cy + sr * sp * sy,
            -sr * cy + cr * sp * sy,
            -sp,
            sr * cp,
            cr * cp,
        ))
    }

    pub fn to_euler(&self) -> Result<EulerAngles> {
        let c = &self.0;
        let c31 = c[(2, 0)];
        if c31.abs() >= 1.0 - 1e-9 {
            return Err(Error::GimbalLock(c31.abs()));
        }
        Ok(EulerAngles {
            roll: c[(2, 1)].atan2(c[(2, 2)]),
            pitch: -c31.asin(),
            yaw: c[(1, 0)].atan2(c[(0, 0)]),
        })
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `C_n^b`.
    #[inline]
    pub fn transpose(&self) -> Matrix3<f64> {
        self.0.transpose()
    }

    /// One step of the symmetric correction `C <- C (3I - C^T C) / 2`.
    pub fn orthonormalized(&self) -> Self {
        let c = self.0;
        let ctc = c.transpose() * c;
        Dcm(c * (Matrix3::identity() * 3.0 - ctc) * 0.5)
    }

    /// Frobenius norm of `C^T C - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

/// Earth constants. Defaults: Earth rate 7.29e-5 rad/s, WGS-84 ellipsoid, standard gravity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub omega_e: f64,
    pub semi_major_axis: f64,
    pub ecc2: f64,
    pub gravity: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            omega_e: 7.29e-5,
            semi_major_axis: 6_378_137.0,
            ecc2: 6.694_379_990_1e-3,
            gravity: 9.806_65,
        }
    }
}

impl EarthModel {
    /// Same ellipsoid and gravity with Earth rotation switched off.
    pub fn without_rotation() -> Self {
        Self {
            omega_e: 0.0,
            ..Self::default()
        }
    }

    /// Meridian and prime-vertical radii of curvature `(M, N)`.
    pub fn radii(&self, lat: f64) -> (f64, f64) {
        let s2 = lat.sin().powi(2);
        let w = 1.0 - self.ecc2 * s2;
        let n = self.semi_major_axis / w.sqrt();
        let m = self.semi_major_axis * (1.0 - self.ecc2) / (w * w.sqrt());
        (m, n)
    }

    /// Gravity vector in NED (points down).
    pub fn gravity_ned(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.gravity)
    }

    /// `(M, N, g^n)` at a position.
    pub fn geometry(&self, p: &GeodeticPosition) -> (f64, f64, Vector3<f64>) {
        let (m, n) = self.radii(p.lat);
        (m, n, self.gravity_ned())
    }

    /// Earth rate `w_ie^n` and transport rate `w_en^n`, both in NED.
    pub fn rates(&self, p: &GeodeticPosition, v: &NedVelocity) -> (Vector3<f64>, Vector3<f64>) {
        let (sl, cl) = p.lat.sin_cos();
        let w_ie = Vector3::new(self.omega_e * cl, 0.0, -self.omega_e * sl);
        let (m, n) = self.radii(p.lat);
        // lambda_dot * cos(lat) = v_E / (N + h), phi_dot = v_N / (M + h)
        let e_term = v.y / (n + p.h);
        let w_en = Vector3::new(e_term, -v.x / (m + p.h), -e_term * sl / cl);
        (w_ie, w_en)
    }

    /// Jacobian of `w_en^n` with respect to NED velocity.
    pub fn transport_rate_jacobian(&self, p: &GeodeticPosition) -> Matrix3<f64> {
        let (m, n) = self.radii(p.lat);
        let tan = p.lat.tan();
        Matrix3::new(
            0.0,
            1.0 / (n + p.h),
            0.0,
            -1.0 / (m + p.h),
            0.0,
            0.0,
            0.0,
            -tan / (n + p.h),
            0.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skew_examples() {
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            s,
            Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0)
        );
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let w = skew(&Vector3::x()) * Vector3::y();
        assert_eq!(w, Vector3::z());
    }

    proptest! {
        #[test]
        fn skew_is_antisymmetric_cross(a in prop::array::uniform3(-1e3f64..1e3), b in prop::array::uniform3(-1e3f64..1e3)) {
            let v = Vector3::from(a);
            let w = Vector3::from(b);
            let s = skew(&v);
            prop_assert_eq!(s + s.transpose(), Matrix3::zeros());
            prop_assert!((s * w - v.cross(&w)).norm() <= 1e-9 * (1.0 + v.norm() * w.norm()));
        }

        #[test]
        fn euler_dcm_is_orthonormal(r in -3.1f64..3.1, p in -1.5f64..1.5, y in -3.1f64..3.1) {
            let c = Dcm::from_euler(EulerAngles::new(r, p, y));
            prop_assert!(c.orthonormality_defect() <= 1e-9);
            prop_assert!((c.determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn euler_zero_is_identity() {
        assert_eq!(
            *Dcm::from_euler(EulerAngles::new(0.0, 0.0, 0.0)).matrix(),
            Matrix3::identity()
        );
    }

    #[test]
    fn pure_yaw_maps_body_x_to_east() {
        let c = Dcm::from_euler(EulerAngles::new(0.0, 0.0, FRAC_PI_2));
        let v = c.matrix() * Vector3::x();
        assert_relative_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let e = EulerAngles::from_degrees(10.0, 20.0, 30.0);
        let back = Dcm::from_euler(e).to_euler().unwrap();
        assert!((back.roll - e.roll).abs() < 1e-12);
        assert!((back.pitch - e.pitch).abs() < 1e-12);
        assert!((back.yaw - e.yaw).abs() < 1e-12);
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let c = Dcm::from_euler(EulerAngles::new(0.1, FRAC_PI_2, 0.2));
        assert!(matches!(c.to_euler(), Err(Error::GimbalLock(_))));
    }

    #[test]
    fn earth_rate_examples() {
        let e = EarthModel::default();
        let (w_ie, w_en) = e.rates(&GeodeticPosition::new(0.0, 0.0, 0.0), &Vector3::zeros());
        assert_eq!(w_ie, Vector3::new(7.29e-5, 0.0, 0.0));
        assert_eq!(w_en, Vector3::zeros());
        let (w_ie, _) = e.rates(
            &GeodeticPosition::new(FRAC_PI_2, 0.0, 0.0),
            &Vector3::zeros(),
        );
        assert!((w_ie - Vector3::new(0.0, 0.0, -7.29e-5)).norm() < 1e-20);
    }

    #[test]
    fn earth_rates_match_brute_force() {
        let e = EarthModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = GeodeticPosition::new(
                rng.random_range(-1.4..1.4),
                rng.random_range(-3.0..3.0),
                rng.random_range(-500.0..500.0),
            );
            let v = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-1.0..1.0),
            );
            let (w_ie, w_en) = e.rates(&p, &v);
            // independent evaluation through the position rates
            let a = 6_378_137.0f64;
            let e2 = 6.694_379_990_1e-3f64;
            let den = 1.0 - e2 * p.lat.sin() * p.lat.sin();
            let n = a / den.sqrt();
            let m = a * (1.0 - e2) / den.powf(1.5);
            let lat_dot = v.x / (m + p.h);
            let lon_dot = v.y / ((n + p.h) * p.lat.cos());
            let ie = Vector3::new(7.29e-5 * p.lat.cos(), 0.0, -7.29e-5 * p.lat.sin());
            let en = Vector3::new(lon_dot * p.lat.cos(), -lat_dot, -lon_dot * p.lat.sin());
            assert!((w_ie - ie).norm() <= 1e-18);
            assert!((w_en - en).norm() <= 1e-15 * (1.0 + en.norm()));
        }
    }

    #[test]
    fn radii_at_equator_and_sweep() {
        let e = EarthModel::default();
        let (_, n, g) = e.geometry(&GeodeticPosition::new(0.0, 0.0, 0.0));
        assert_eq!(n, 6_378_137.0);
        assert_eq!(g, Vector3::new(0.0, 0.0, 9.806_65));
        for i in 0..=180 {
            let lat = (i as f64 - 90.0).to_radians();
            let (m, n) = e.radii(lat);
            assert!(n >= m - 1e-6, "lat {lat}: N {n} < M {m}");
        }
    }

    #[test]
    fn rodrigues_round_trip() {
        let phi = Vector3::new(0.3, -0.2, 0.9);
        let r = rotation_vector_to_matrix(&phi);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-14);
        assert_relative_eq!(matrix_to_rotation_vector(&r), phi, epsilon = 1e-12);
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert_eq!(wrap_pi(PI), PI);
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}

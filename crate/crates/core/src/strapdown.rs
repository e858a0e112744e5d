//! Strapdown dead-reckoning in geodetic coordinates with NED velocity.
//!
//! All three rate equations are integrated with explicit Euler at the IMU
//! rate, and the attitude is re-orthonormalized after every step.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::nav::{skew, Dcm, EarthModel, GeodeticPosition, NedVelocity};
use crate::{Error, Result};

/// Full navigation solution plus the current sensor bias estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pos: GeodeticPosition,
    pub vel: NedVelocity,
    pub att: Dcm,
    /// Accelerometer bias estimate, m/s^2.
    pub b_a: Vector3<f64>,
    /// Gyro bias estimate, rad/s.
    pub b_g: Vector3<f64>,
}

impl NavState {
    pub fn new(pos: GeodeticPosition, vel: NedVelocity, att: Dcm) -> Self {
        Self {
            pos,
            vel,
            att,
            b_a: Vector3::zeros(),
            b_g: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.lat.is_finite()
            && self.pos.lon.is_finite()
            && self.pos.h.is_finite()
            && self.vel.iter().all(|x| x.is_finite())
            && self.att.matrix().iter().all(|x| x.is_finite())
            && self
                .b_a
                .iter()
                .chain(self.b_g.iter())
                .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force `f_ib^b`, m/s^2.
    pub f: Vector3<f64>,
    /// Angular rate `w_ib^b`, rad/s.
    pub w: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, f: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { t, f, w }
    }

    /// Subtract bias estimates from the raw readings.
    pub fn bias_corrected(&self, b_a: &Vector3<f64>, b_g: &Vector3<f64>) -> Self {
        Self {
            t: self.t,
            f: self.f - b_a,
            w: self.w - b_g,
        }
    }
}

/// `(lat_dot, lon_dot, h_dot)`.
pub fn position_rate(
    pos: &GeodeticPosition,
    vel: &NedVelocity,
    earth: &EarthModel,
) -> Result<Vector3<f64>> {
    let cos_lat = pos.lat.cos();
    if cos_lat <= 1e-12 {
        return Err(Error::PolarSingularity(cos_lat));
    }
    let (m, n) = earth.radii(pos.lat);
    Ok(Vector3::new(
        vel.x / (m + pos.h),
        vel.y / ((n + pos.h) * cos_lat),
        -vel.z,
    ))
}

/// `v_dot = C f - (2 w_ie + w_en) x v + g`.
pub fn velocity_rate(state: &NavState, f_ib: &Vector3<f64>, earth: &EarthModel) -> Vector3<f64> {
    let (w_ie, w_en) = earth.rates(&state.pos, &state.vel);
    state.att.matrix() * f_ib - (2.0 * w_ie + w_en).cross(&state.vel) + earth.gravity_ned()
}

/// `C_dot = C Omega_ib - (Omega_ie + Omega_en) C`.
pub fn attitude_rate(
    att: &Dcm,
    w_ib: &Vector3<f64>,
    w_ie: &Vector3<f64>,
    w_en: &Vector3<f64>,
) -> Matrix3<f64> {
    let c = att.matrix();
    c * skew(w_ib) - skew(&(w_ie + w_en)) * c
}

/// One Euler step of the mechanization with an already bias-corrected IMU sample.
/// Bias estimates are carried over unchanged.
pub fn strapdown_step(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    earth: &EarthModel,
) -> Result<NavState> {
    let r_dot = position_rate(&state.pos, &state.vel, earth)?;
    let v_dot = velocity_rate(state, &imu.f, earth);
    let (w_ie, w_en) = earth.rates(&state.pos, &state.vel);
    let c_dot = attitude_rate(&state.att, &imu.w, &w_ie, &w_en);

    let pos = GeodeticPosition {
        lat: state.pos.lat + r_dot.x * dt,
        lon: state.pos.lon + r_dot.y * dt,
        h: state.pos.h + r_dot.z * dt,
    };
    let att = Dcm::from_matrix_unchecked(state.att.matrix() + c_dot * dt).orthonormalized();
    Ok(NavState {
        pos,
        vel: state.vel + v_dot * dt,
        att,
        b_a: state.b_a,
        b_g: state.b_g,
    })
}

/// Dead-reckon through a whole IMU stream. Returns one state per sample,
/// the first being `init`. Biases in `init` are subtracted from every sample.
pub fn dead_reckon(
    init: &NavState,
    imu: &[ImuSample],
    earth: &EarthModel,
) -> Result<Vec<NavState>> {
    let mut out = Vec::with_capacity(imu.len());
    let mut state = *init;
    out.push(state);
    for pair in imu.windows(2) {
        let dt = pair[1].t - pair[0].t;
        let corrected = pair[0].bias_corrected(&state.b_a, &state.b_g);
        state = strapdown_step(&state, &corrected, dt, earth)?;
        out.push(state);
    }
    Ok(out)
}

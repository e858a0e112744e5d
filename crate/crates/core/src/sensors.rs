//! IMU and DVL error models, the Janus beam geometry, and beam-space
//! least-squares velocity estimation.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::MAX_CONDITION;
use crate::nav::{Dcm, EulerAngles};
use crate::strapdown::ImuSample;
use crate::{Error, Result};

pub type BeamMatrix = SMatrix<f64, 4, 3>;

/// White noise plus random-walk bias model for a 3-axis IMU.
///
/// `sigma_a`/`sigma_g` are per-sample standard deviations; `sigma_ab`/`sigma_gb`
/// are random-walk intensities so that the per-step bias increment has standard
/// deviation `sigma * sqrt(dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuErrorModel {
    pub sigma_a: f64,
    pub sigma_g: f64,
    pub sigma_ab: f64,
    pub sigma_gb: f64,
    pub b_a0: Vector3<f64>,
    pub b_g0: Vector3<f64>,
}

impl ImuErrorModel {
    pub fn perfect() -> Self {
        Self {
            sigma_a: 0.0,
            sigma_g: 0.0,
            sigma_ab: 0.0,
            sigma_gb: 0.0,
            b_a0: Vector3::zeros(),
            b_g0: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_a, self.sigma_g, self.sigma_ab, self.sigma_gb];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "IMU noise std must be >= 0: {sigmas:?}"
            )));
        }
        Ok(())
    }
}

/// Stateful IMU corruptor: holds the current true bias.
#[derive(Debug, Clone)]
pub struct ImuCorruptor {
    model: ImuErrorModel,
    b_a: Vector3<f64>,
    b_g: Vector3<f64>,
}

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

impl ImuCorruptor {
    pub fn new(model: ImuErrorModel) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            b_a: model.b_a0,
            b_g: model.b_g0,
        })
    }

    pub fn accel_bias(&self) -> Vector3<f64> {
        self.b_a
    }

    pub fn gyro_bias(&self) -> Vector3<f64> {
        self.b_g
    }

    /// Corrupt one truth sample, then advance the bias random walks by `dt`.
    /// `noise_gain` multiplies the white-noise standard deviations.
    pub fn corrupt<R: Rng + ?Sized>(
        &mut self,
        truth: &ImuSample,
        dt: f64,
        noise_gain: f64,
        rng: &mut R,
    ) -> ImuSample {
        let m = &self.model;
        let n_a = normal3(rng) * (m.sigma_a * noise_gain);
        let n_g = normal3(rng) * (m.sigma_g * noise_gain);
        let out = ImuSample {
            t: truth.t,
            f: truth.f + self.b_a + n_a,
            w: truth.w + self.b_g + n_g,
        };
        let sq = dt.sqrt();
        self.b_a += normal3(rng) * (m.sigma_ab * sq);
        self.b_g += normal3(rng) * (m.sigma_gb * sq);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlConfig {
    /// Beam pitch from the DVL z-axis, rad.
    pub pitch: f64,
    /// DVL-to-body rotation.
    pub c_d_b: Dcm,
    pub rate_hz: f64,
}

impl Default for DvlConfig {
    fn default() -> Self {
        Self {
            pitch: 20f64.to_radians(),
            c_d_b: Dcm::identity(),
            rate_hz: 1.0,
        }
    }
}

impl DvlConfig {
    pub fn with_mounting(pitch: f64, mounting: EulerAngles) -> Self {
        Self {
            pitch,
            c_d_b: Dcm::from_euler(mounting),
            rate_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvlErrorModel {
    /// Per-beam bias, m/s.
    pub bias: Vector4<f64>,
    /// Per-axis scale factor applied in the DVL frame.
    pub scale: Vector3<f64>,
    /// Per-beam white noise std, m/s.
    pub sigma_beam: f64,
}

impl DvlErrorModel {
    pub fn noise_only(sigma_beam: f64) -> Self {
        Self {
            bias: Vector4::zeros(),
            scale: Vector3::zeros(),
            sigma_beam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamMeasurement {
    pub t: f64,
    pub y: Vector4<f64>,
}

/// Beam yaw angles of the Janus configuration: 45, 135, 225, 315 degrees.
pub fn beam_yaws() -> [f64; 4] {
    std::array::from_fn(|i| (i as f64 * 90.0 + 45.0).to_radians())
}

pub fn beam_matrix(cfg: &DvlConfig) -> BeamMatrix {
    let (sa, ca) = cfg.pitch.sin_cos();
    let yaws = beam_yaws();
    BeamMatrix::from_fn(|i, j| {
        let (sy, cy) = yaws[i].sin_cos();
        match j {
            0 => cy * sa,
            1 => sy * sa,
            _ => ca,
        }
    })
}

/// Beam-space measurement for a true body-frame velocity.
pub fn simulate_dvl<R: Rng + ?Sized>(
    t: f64,
    v_body: &Vector3<f64>,
    cfg: &DvlConfig,
    err: &DvlErrorModel,
    rng: &mut R,
) -> BeamMeasurement {
    let v_d = cfg.c_d_b.transpose() * v_body;
    let scaled = v_d.component_mul(&(Vector3::repeat(1.0) + err.scale));
    let noise = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * err.sigma_beam);
    BeamMeasurement {
        t,
        y: beam_matrix(cfg) * scaled + err.bias + noise,
    }
}

fn normal_equations(h: &BeamMatrix) -> Result<Matrix3<f64>> {
    let hth = h.transpose() * h;
    let eig = hth.symmetric_eigen();
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(min > 0.0) || max / min > MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::IllConditioned {
            context: "DVL normal equations",
            condition,
        });
    }
    hth.try_inverse().ok_or(Error::IllConditioned {
        context: "DVL normal equations",
        condition: f64::INFINITY,
    })
}

/// Least-squares DVL-frame velocity rotated into the body frame.
pub fn estimate_dvl_velocity(y: &BeamMeasurement, cfg: &DvlConfig) -> Result<Vector3<f64>> {
    let h = beam_matrix(cfg);
    let v_d = normal_equations(&h)? * h.transpose() * y.y;
    Ok(cfg.c_d_b.matrix() * v_d)
}

/// Body-frame covariance of the least-squares velocity for white beam noise.
pub fn body_velocity_covariance(cfg: &DvlConfig, sigma_beam: f64) -> Result<Matrix3<f64>> {
    let h = beam_matrix(cfg);
    let cov_d = normal_equations(&h)? * (sigma_beam * sigma_beam);
    let c = cfg.c_d_b.matrix();
    Ok(c * cov_d * c.transpose())
}

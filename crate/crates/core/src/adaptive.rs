//! Innovation-based adaptive process noise.
//!
//! Three estimators share a moving window of the last `N` innovations:
//! the plain innovation-adaptive estimate `K C_v K^T`, a trace-ratio scaling
//! rule, and an exponential forgetting average.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::eskf::{
    run_filter, FilterConfig, FilterInit, FilterOutput, NoiseDecision, ProcessNoisePolicy,
    RunOptions, SensorStreams, UpdateContext,
};
use crate::linalg::{symmetrize, Mat12, Mat12x3, Mat3x12};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct InnovationWindow {
    capacity: usize,
    ring: VecDeque<Vector3<f64>>,
}

impl InnovationWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter(
                "innovation window must hold at least one sample".into(),
            ));
        }
        Ok(Self {
            capacity,
            ring: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, dz: Vector3<f64>) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(dz);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.ring.len() == self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.ring.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveVariant {
    Iae,
    Scaling,
    Forgetting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub variant: AdaptiveVariant,
    pub window: usize,
    pub gamma: f64,
    /// Added to the bias-block diagonal of every estimate so that the bias
    /// states never lose process noise.
    pub floor: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            variant: AdaptiveVariant::Iae,
            window: 5,
            gamma: 0.15,
            floor: 1e-15,
        }
    }
}

impl AdaptiveConfig {
    pub fn with_variant(variant: AdaptiveVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter(
                "window size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::InvalidParameter("floor must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sample covariance of the windowed innovations (zero-mean assumption).
pub fn innovation_covariance(window: &InnovationWindow) -> Result<Matrix3<f64>> {
    if !window.is_full() {
        return Err(Error::WindowNotFull {
            filled: window.len(),
            capacity: window.capacity(),
        });
    }
    let sum = window
        .iter()
        .fold(Matrix3::zeros(), |acc, dz| acc + dz * dz.transpose());
    Ok(symmetrize(&(sum / window.len() as f64)))
}

/// `K C_v K^T`.
pub fn iae_q(gain: &Mat12x3, c_v: &Matrix3<f64>) -> Mat12 {
    symmetrize(&(gain * c_v * gain.transpose()))
}

/// Ratio of predicted innovation-covariance traces under `q_prev` and `q_nominal`.
pub fn scaling_factor(
    h: &Mat3x12,
    phi: &Mat12,
    p_post: &Mat12,
    q_prev: &Mat12,
    q_nominal: &Mat12,
) -> Result<f64> {
    let prop = phi * p_post * phi.transpose();
    let num = (h * (prop + q_prev) * h.transpose()).trace();
    let den = (h * (prop + q_nominal) * h.transpose()).trace();
    if !(den > 0.0) || !(num > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scaling factor needs positive traces, got {num:e} / {den:e}"
        )));
    }
    Ok(num / den)
}

/// `Q_prev * sqrt(beta)`.
pub fn scaled_q(q_prev: &Mat12, beta: f64) -> Mat12 {
    q_prev * beta.sqrt()
}

/// `gamma Q_prev + (1 - gamma) Q_hat_prev`.
pub fn forgetting_q(q_prev: &Mat12, q_hat_prev: &Mat12, gamma: f64) -> Result<Mat12> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!(
            "gamma {gamma} outside [0, 1]"
        )));
    }
    Ok(symmetrize(&(q_prev * gamma + q_hat_prev * (1.0 - gamma))))
}

/// Diagonal floor on the bias blocks, which a rank-3 estimate leaves frozen.
fn with_floor(mut q: Mat12, floor: f64) -> Mat12 {
    for i in 6..12 {
        q[(i, i)] += floor;
    }
    q
}

/// Process-noise policy implementing the three model-based variants.
#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    cfg: AdaptiveConfig,
    window: InnovationWindow,
    previous: Option<Mat12>,
}

impl AdaptivePolicy {
    pub fn new(cfg: AdaptiveConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            window: InnovationWindow::new(cfg.window)?,
            cfg,
            previous: None,
        })
    }

    /// Innovation-based estimate for the update just processed, or `None`
    /// while the window is still filling.
    pub fn observe(&mut self, ctx: &UpdateContext<'_>) -> Result<Option<Mat12>> {
        self.window.push(*ctx.innovation);
        if !self.window.is_full() {
            return Ok(None);
        }
        let c_v = innovation_covariance(&self.window)?;
        Ok(Some(with_floor(iae_q(ctx.gain, &c_v), self.cfg.floor)))
    }
}

impl ProcessNoisePolicy for AdaptivePolicy {
    fn after_update(&mut self, ctx: &UpdateContext<'_>) -> Result<Option<NoiseDecision>> {
        let Some(fresh) = self.observe(ctx)? else {
            return Ok(None);
        };
        let q = match (self.cfg.variant, self.previous) {
            (AdaptiveVariant::Iae, _) | (AdaptiveVariant::Forgetting, None) => fresh,
            (AdaptiveVariant::Scaling, prev) => {
                // Fresh estimate against the one in force: the literal
                // self-referential ratio has no fixed point other than Q_nominal.
                // The recursion starts from the nominal matrix, whose shape it keeps.
                let prev = prev.unwrap_or(*ctx.nominal_q);
                let beta = scaling_factor(ctx.h, ctx.phi_interval, ctx.p_start, &fresh, &prev)?;
                scaled_q(&prev, beta)
            }
            (AdaptiveVariant::Forgetting, Some(prev)) => {
                forgetting_q(&fresh, &prev, self.cfg.gamma)?
            }
        };
        self.previous = Some(q);
        Ok(Some(NoiseDecision {
            applied: q,
            base: q,
        }))
    }
}

/// Filter with one of the model-based adaptive process-noise estimators.
pub fn run_aekf(
    adaptive: &AdaptiveConfig,
    streams: &SensorStreams,
    cfg: &FilterConfig,
    init: &FilterInit,
    opts: &RunOptions<'_>,
) -> Result<FilterOutput> {
    let mut policy = AdaptivePolicy::new(*adaptive)?;
    run_filter(streams, cfg, init, &mut policy, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn window_gating() {
        let mut w = InnovationWindow::new(3).unwrap();
        w.push(Vector3::x());
        assert!(matches!(
            innovation_covariance(&w),
            Err(Error::WindowNotFull {
                filled: 1,
                capacity: 3
            })
        ));
        assert!(InnovationWindow::new(0).is_err());
    }

    #[test]
    fn covariance_trivial_cases() {
        let z = Vector3::new(1.0, -2.0, 0.5);
        let mut w = InnovationWindow::new(1).unwrap();
        w.push(z);
        assert_eq!(innovation_covariance(&w).unwrap(), z * z.transpose());
        let mut w = InnovationWindow::new(5).unwrap();
        for _ in 0..7 {
            w.push(z);
        }
        assert!((innovation_covariance(&w).unwrap() - z * z.transpose()).norm() < 1e-14);
    }

    #[test]
    fn iae_selects_velocity_block() {
        let mut k = Mat12x3::zeros();
        k.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        let q = iae_q(&k, &Matrix3::identity());
        let mut expected = Mat12::zeros();
        expected
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        assert_eq!(q, expected);
    }

    #[test]
    fn iae_is_psd() {
        let k = Mat12x3::from_fn(|i, j| ((i * 5 + j * 11) % 7) as f64 - 3.0);
        let c = Matrix3::new(2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5);
        let q = iae_q(&k, &c);
        assert!(min_eigenvalue(&q) >= -1e-12 * q.trace());
    }

    #[test]
    fn scaling_identity_and_growth() {
        let h = Mat3x12::from_fn(|i, j| if i == j % 3 { 1.0 } else { 0.1 });
        let phi = Mat12::identity() + Mat12::from_fn(|i, j| 1e-3 * (i as f64 - j as f64));
        let p = Mat12::identity() * 0.01;
        let qn = Mat12::identity() * 1e-4;
        assert!((scaling_factor(&h, &phi, &p, &qn, &qn).unwrap() - 1.0).abs() < 1e-15);
        assert!(scaling_factor(&h, &phi, &p, &(qn * 4.0), &qn).unwrap() > 1.0);
        assert!(scaling_factor(&Mat3x12::zeros(), &phi, &p, &qn, &qn).is_err());
        assert_eq!(scaled_q(&qn, 4.0), qn * 2.0);
    }

    #[test]
    fn forgetting_examples() {
        let q_prev = Mat12::identity() * 2.0;
        let q_hat = Mat12::identity();
        assert_eq!(forgetting_q(&q_prev, &q_hat, 0.0).unwrap(), q_hat);
        assert_eq!(forgetting_q(&q_prev, &q_hat, 1.0).unwrap(), q_prev);
        assert!(
            (forgetting_q(&q_prev, &q_hat, 0.15).unwrap() - Mat12::identity() * 1.15).norm()
                < 1e-15
        );
        assert!(forgetting_q(&q_prev, &q_hat, 1.5).is_err());
        assert!(forgetting_q(&q_prev, &q_hat, -0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdaptiveConfig::default().validate().is_ok());
        let mut c = AdaptiveConfig::default();
        c.gamma = 2.0;
        assert!(c.validate().is_err());
        c = AdaptiveConfig::default();
        c.window = 0;
        assert!(AdaptivePolicy::new(c).is_err());
    }
}

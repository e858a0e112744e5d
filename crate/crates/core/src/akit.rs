//! Learned process-noise scaling on top of the innovation-adaptive filter.
//!
//! At every update the set-transformer maps the latest input window to a
//! positive scale per state, and the innovation-based estimate is rescaled as
//! `S^{1/2} Q_hat S^{1/2}`. Training minimizes the Kalman-informed loss: the
//! update interval is replayed from its stored posterior and transition
//! matrices with the candidate Q, and the corrected velocity is scored
//! against ground truth.

use std::path::PathBuf;

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveConfig, AdaptivePolicy};
use crate::eskf::{
    run_filter, FilterConfig, FilterInit, FilterOutput, FilterTrace, NoiseDecision,
    ProcessNoisePolicy, RunOptions, SensorStreams, UpdateContext,
};
use crate::linalg::{invert_spd3, Mat12, Vec12};
use crate::transformer::{SetTransformer, Standardizer};
use crate::{Error, Result};

pub type AkitModel = SetTransformer;
pub const STATE_DIM: usize = 12;

/// `S^{1/2} Q_hat S^{1/2}` with `S = diag(scale)`.
pub fn apply_scale(q_hat: &Mat12, scale: &[f64]) -> Result<Mat12> {
    if scale.len() != STATE_DIM {
        return Err(Error::ShapeMismatch(format!(
            "{} scale factors, expected 12",
            scale.len()
        )));
    }
    if let Some(bad) = scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale factors must be positive, got {bad}"
        )));
    }
    let d: Vec<f64> = scale.iter().map(|s| s.sqrt()).collect();
    Ok(Mat12::from_fn(|i, j| q_hat[(i, j)] * (d[i] * d[j])))
}

/// Loss value, its gradient with respect to the scale vector, and the
/// replayed velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub velocity: Vector3<f64>,
}

/// Loss with the scale held at the value the baseline filter used.
pub fn baseline_loss(trace: &FilterTrace) -> Result<f64> {
    Ok(kalman_informed_loss(&[1.0; STATE_DIM], trace)?.loss)
}

/// Replay one update interval with `Q = apply_scale(trace.q_base, scale)` and
/// return the velocity MSE after the correction, with its analytic gradient.
pub fn kalman_informed_loss(scale: &[f64], trace: &FilterTrace) -> Result<LossEval> {
    let q = apply_scale(&trace.q_base, scale)?;
    let mut p = trace.p_start;
    for phi in &trace.phis {
        p = phi * p * phi.transpose() + q;
    }
    let h = &trace.h;
    let s = h * p * h.transpose() + trace.r;
    let s_inv = invert_spd3(&s, "replayed innovation covariance")?;
    let k = p * h.transpose() * s_inv;
    let dx: Vec12 = k * trace.dz;
    let v = trace.v_pre - dx.fixed_rows::<3>(0);
    let err = v - trace.v_gt;
    let loss = err.norm_squared() / 3.0;

    // reverse pass: dL/dK, then dL/dP_T, then back through the predictions
    let mut g_x = Vec12::zeros();
    g_x.fixed_rows_mut::<3>(0).copy_from(&(-2.0 / 3.0 * err));
    let g_k = g_x * trace.dz.transpose();
    let g_ks = g_k * s_inv;
    let mut g_p = g_ks * h - h.transpose() * (k.transpose() * g_ks) * h;
    let mut g_q = Mat12::zeros();
    for phi in trace.phis.iter().rev() {
        g_q += g_p;
        g_p = phi.transpose() * g_p * phi;
    }
    let g_q = (g_q + g_q.transpose()) * 0.5;
    let d: Vec<f64> = scale.iter().map(|s| s.sqrt()).collect();
    let grad = (0..STATE_DIM)
        .map(|a| {
            let acc: f64 = (0..STATE_DIM)
                .map(|b| g_q[(a, b)] * trace.q_base[(a, b)] * d[b])
                .sum();
            acc / d[a]
        })
        .collect();
    if !loss.is_finite() {
        return Err(Error::NonFinite("Kalman-informed loss".into()));
    }
    Ok(LossEval {
        loss,
        grad,
        velocity: v,
    })
}

/// Process-noise policy: innovation-based estimate rescaled by the network.
pub struct AkitPolicy<'a> {
    model: &'a AkitModel,
    inner: AdaptivePolicy,
}

impl<'a> AkitPolicy<'a> {
    pub fn new(model: &'a AkitModel, adaptive: &AdaptiveConfig) -> Result<Self> {
        let a = AdaptiveConfig {
            variant: crate::adaptive::AdaptiveVariant::Iae,
            ..*adaptive
        };
        Ok(Self {
            model,
            inner: AdaptivePolicy::new(a)?,
        })
    }
}

impl ProcessNoisePolicy for AkitPolicy<'_> {
    fn after_update(&mut self, ctx: &UpdateContext<'_>) -> Result<Option<NoiseDecision>> {
        let Some(q_hat) = self.inner.observe(ctx)? else {
            return Ok(None);
        };
        let scale = self.model.predict(&ctx.window.to_matrix())?;
        Ok(Some(NoiseDecision {
            applied: apply_scale(&q_hat, &scale)?,
            base: q_hat,
        }))
    }
}

pub fn run_akit(
    model: &AkitModel,
    adaptive: &AdaptiveConfig,
    streams: &SensorStreams,
    cfg: &FilterConfig,
    init: &FilterInit,
    opts: &RunOptions<'_>,
) -> Result<FilterOutput> {
    let mut policy = AkitPolicy::new(model, adaptive)?;
    run_filter(streams, cfg, init, &mut policy, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Smoothing constant of the squared-gradient average.
    pub alpha: f64,
    pub eps: f64,
    pub seed: u64,
    /// Record every n-th update interval as a training trace.
    pub trace_stride: usize,
    /// Scenario specification files (JSON); empty means the built-in suite.
    pub scenarios: Vec<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 400,
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            alpha: 0.99,
            eps: 1e-8,
            seed: 0,
            trace_stride: 1,
            scenarios: vec![],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(
                "learning rate, weight decay and eps must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter("alpha must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// RMSprop with decoupled-in-gradient weight decay.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub eps: f64,
    pub square_avg: Vec<DMatrix<f64>>,
}

impl RmsProp {
    pub fn new(cfg: &TrainingConfig, shapes: &[DMatrix<f64>]) -> Self {
        Self {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            alpha: cfg.alpha,
            eps: cfg.eps,
            square_avg: shapes
                .iter()
                .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
                .collect(),
        }
    }

    /// `g += wd θ; v = α v + (1-α) g²; θ -= lr g / (√v + ε)`.
    pub fn step(&mut self, params: &mut [DMatrix<f64>], grads: &[DMatrix<f64>]) {
        for ((theta, g), v) in params.iter_mut().zip(grads).zip(&mut self.square_avg) {
            for i in 0..theta.len() {
                let gi = g[i] + self.weight_decay * theta[i];
                v[i] = self.alpha * v[i] + (1.0 - self.alpha) * gi * gi;
                theta[i] -= self.lr * gi / (v[i].sqrt() + self.eps);
            }
        }
    }
}

/// Mean loss and parameter gradients of a batch.
pub fn batch_gradient(
    net: &SetTransformer,
    traces: &[&FilterTrace],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    let mut grads = net.params.zeros_like();
    let mut total = 0.0;
    let mut rng = rng;
    let n = traces.len().max(1) as f64;
    for tr in traces {
        let f = net.forward(&tr.input, rng.as_deref_mut())?;
        let scale: Vec<f64> = f.output().iter().copied().collect();
        let eval = kalman_informed_loss(&scale, tr)?;
        total += eval.loss;
        let seed = DMatrix::from_row_slice(1, STATE_DIM, &eval.grad);
        for (acc, g) in grads.iter_mut().zip(f.backward(seed)) {
            *acc += g / n;
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok((total / n, grads))
}

/// Mean loss of a set of traces in inference mode.
pub fn evaluate(net: &SetTransformer, traces: &[FilterTrace]) -> Result<f64> {
    let mut total = 0.0;
    for tr in traces {
        let scale = net.predict(&tr.input)?;
        total += kalman_informed_loss(&scale, tr)?.loss;
    }
    Ok(total / traces.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Train in place. Fits the input standardization on the first call (when it
/// is still the identity) and returns the per-epoch mean training loss.
pub fn train(
    net: &mut SetTransformer,
    traces: &[FilterTrace],
    cfg: &TrainingConfig,
) -> Result<Vec<EpochStats>> {
    train_with(net, traces, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    net: &mut SetTransformer,
    traces: &[FilterTrace],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochStats, &SetTransformer) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::InvalidParameter("no training traces".into()));
    }
    if net.standardizer == Standardizer::identity(net.config.in_channels) {
        net.standardizer =
            Standardizer::fit(traces.iter().map(|t| &t.input), net.config.in_channels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = RmsProp::new(cfg, &net.params.tensors);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&FilterTrace> = chunk.iter().map(|&i| &traces[i]).collect();
            let (loss, grads) = batch_gradient(net, &batch, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            sum += loss * batch.len() as f64;
            opt.step(&mut net.params.tensors, &grads);
        }
        let stats = EpochStats {
            epoch,
            mean_loss: sum / traces.len() as f64,
        };
        on_epoch(&stats, net)?;
        history.push(stats);
    }
    Ok(history)
}

/// Innovation-adaptive run that records training traces.
pub fn collect_traces(
    streams: &SensorStreams,
    truth_velocity: &[Vector3<f64>],
    cfg: &FilterConfig,
    init: &FilterInit,
    adaptive: &AdaptiveConfig,
    stride: usize,
    window: usize,
) -> Result<Vec<FilterTrace>> {
    let opts = RunOptions {
        truth_velocity: Some(truth_velocity),
        trace_stride: stride.max(1),
        window_len: window,
    };
    let a = AdaptiveConfig {
        variant: crate::adaptive::AdaptiveVariant::Iae,
        ..*adaptive
    };
    let out = crate::adaptive::run_aekf(&a, streams, cfg, init, &opts)?;
    Ok(out.traces.into_iter().filter(|t| t.adapted).collect())
}

/// A one-state analogue of the replay used in documentation and tests.
pub fn scalar_replay(p: f64, phi: f64, q: f64, h: f64, r: f64, dz: f64) -> (f64, f64, f64) {
    let p_minus = phi * p * phi + q;
    let k = p_minus * h / (h * p_minus * h + r);
    (p_minus, k, k * dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, Mat3x12};
    use nalgebra::Matrix3;

    fn toy_trace() -> FilterTrace {
        let mut h = Mat3x12::zeros();
        h.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        h[(0, 4)] = 0.3;
        let phi = Mat12::identity() + Mat12::from_fn(|i, j| 1e-2 * ((i + 2 * j) % 5) as f64 - 0.02);
        FilterTrace {
            epoch: 100,
            p_start: Mat12::from_diagonal(&Vec12::from_fn(|i, _| 1e-3 * (1.0 + i as f64))),
            phis: vec![phi; 10],
            h,
            r: Matrix3::identity() * 1e-3,
            dz: Vector3::new(0.05, -0.02, 0.01),
            v_pre: Vector3::new(1.0, 0.5, 0.0),
            v_gt: Vector3::new(0.97, 0.52, -0.01),
            q_base: Mat12::from_fn(|i, j| if i == j { 1e-4 } else { 1e-6 }),
            adapted: true,
            input: DMatrix::zeros(100, 9),
        }
    }

    #[test]
    fn scalar_case_by_hand() {
        let (p_minus, k, dx) = scalar_replay(1.0, 1.0, 1.0, 1.0, 1.0, 3.0);
        assert_eq!(p_minus, 2.0);
        assert!((k - 2.0 / 3.0).abs() < 1e-15);
        assert!((dx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn apply_scale_examples() {
        let q = Mat12::from_diagonal(&Vec12::from_fn(|i, _| i as f64 + 1.0));
        assert_eq!(apply_scale(&q, &[1.0; 12]).unwrap(), q);
        assert_eq!(apply_scale(&q, &[4.0; 12]).unwrap(), q * 4.0);
        assert!(apply_scale(&q, &[0.0; 12]).is_err());
        assert!(apply_scale(&q, &[1.0; 11]).is_err());
        let a = Mat12::from_fn(|i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let psd = a * a.transpose();
        let scale: Vec<f64> = (0..12).map(|i| 0.1 + i as f64).collect();
        let out = apply_scale(&psd, &scale).unwrap();
        assert_eq!(out, out.transpose());
        assert!(min_eigenvalue(&out) >= -1e-12 * out.trace());
    }

    #[test]
    fn zero_innovation_makes_scale_inert() {
        let mut tr = toy_trace();
        tr.dz = Vector3::zeros();
        let a = kalman_informed_loss(&[1.0; 12], &tr).unwrap();
        let b = kalman_informed_loss(&[7.0; 12], &tr).unwrap();
        let expected = (tr.v_pre - tr.v_gt).norm_squared() / 3.0;
        assert!((a.loss - expected).abs() < 1e-15);
        assert_eq!(a.loss, b.loss);
        assert!(a.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn scale_gradient_matches_finite_differences() {
        let tr = toy_trace();
        let s: Vec<f64> = (0..12).map(|i| 0.5 + 0.2 * i as f64).collect();
        let e = kalman_informed_loss(&s, &tr).unwrap();
        for i in 0..12 {
            let h = 1e-6 * (1.0 + s[i]);
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            let fd = (kalman_informed_loss(&sp, &tr).unwrap().loss
                - kalman_informed_loss(&sm, &tr).unwrap().loss)
                / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(e.grad[i].abs()).max(1e-12);
            assert!(
                (fd - e.grad[i]).abs() <= tol,
                "s[{i}]: fd {fd:e} analytic {:e}",
                e.grad[i]
            );
        }
    }

    #[test]
    fn rmsprop_single_step_by_hand() {
        let cfg = TrainingConfig {
            learning_rate: 0.01,
            weight_decay: 0.1,
            ..TrainingConfig::default()
        };
        let mut params = vec![DMatrix::from_element(1, 1, 2.0)];
        let mut opt = RmsProp::new(&cfg, &params);
        opt.step(&mut params, &[DMatrix::from_element(1, 1, 0.5)]);
        // g = 0.5 + 0.1*2 = 0.7; v = 0.01*0.49 = 0.0049; step = 0.01*0.7/(0.07+1e-8)
        let expected = 2.0 - 0.01 * 0.7 / (0.0049f64.sqrt() + 1e-8);
        assert!((params[0][(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        let before = vec![DMatrix::from_element(2, 2, 0.3)];
        let mut params = before.clone();
        let mut opt = RmsProp::new(&cfg, &params);
        for _ in 0..5 {
            opt.step(&mut params, &[DMatrix::from_element(2, 2, 1.0)]);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn config_json_defaults() {
        let c: TrainingConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 400);
        assert_eq!(c.learning_rate, 1e-5);
        assert!(TrainingConfig { alpha: 1.0, ..c }.validate().is_err());
    }
}

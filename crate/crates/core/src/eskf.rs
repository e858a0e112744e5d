//! 12-state error-state EKF for INS/DVL fusion.
//!
//! Error state layout: `[dv (0..3), eps (3..6), db_a (6..9), db_g (9..12)]`.
//!
//! Sign conventions (these are what the Jacobians below are derived for):
//! - `dv = v_ins - v_true`, corrected as `v <- v - dv`
//! - `C_ins = (I + [eps x]) C_true`, corrected as `C <- (I - [eps x]) C`
//! - `db = b_true - b_est`, corrected as `b <- b + db`
//!
//! The driving noise vector is stacked as `[n_g, n_a, n_ab, n_gb]`, which is
//! the ordering that makes the noise-distribution matrix below map
//! accelerometer noise into velocity and gyro noise into attitude.

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::linalg::{invert_spd3, symmetrize, Mat12, Mat12x3, Mat3x12, Vec12};
use crate::nav::{rotation_vector_to_matrix, skew, Dcm, EarthModel};
use crate::sensors::{body_velocity_covariance, DvlConfig, ImuErrorModel};
use crate::strapdown::{strapdown_step, ImuSample, NavState};
use crate::{Error, Result};

pub const STATE_DIM: usize = 12;
/// Channels of the network input window: bias-corrected f, w, and INS velocity.
pub const INPUT_CHANNELS: usize = 9;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Continuous process-noise density for the `[n_g, n_a, n_ab, n_gb]` stack.
    pub q_c: Mat12,
    /// Body-frame DVL velocity noise covariance.
    pub r: Matrix3<f64>,
    /// Propagation interval, s.
    pub tau_s: f64,
    /// Truncation order of the transition-matrix power series.
    pub series_order: usize,
    pub earth: EarthModel,
}

impl FilterConfig {
    /// Process and measurement noise matched to the given sensor models.
    pub fn from_models(
        imu: &ImuErrorModel,
        dvl: &DvlConfig,
        sigma_beam: f64,
        tau_s: f64,
    ) -> Result<Self> {
        Ok(Self {
            q_c: process_noise_density(imu, tau_s),
            r: body_velocity_covariance(dvl, sigma_beam)?,
            tau_s,
            series_order: 2,
            earth: EarthModel::default(),
        })
    }
}

/// Continuous noise density such that `G Q_c G^T tau` reproduces the per-sample
/// white noise of the IMU model and the bias random walks.
pub fn process_noise_density(imu: &ImuErrorModel, tau_s: f64) -> Mat12 {
    let mut d = Vec12::zeros();
    for i in 0..3 {
        d[i] = imu.sigma_g * imu.sigma_g * tau_s;
        d[3 + i] = imu.sigma_a * imu.sigma_a * tau_s;
        d[6 + i] = imu.sigma_ab * imu.sigma_ab;
        d[9 + i] = imu.sigma_gb * imu.sigma_gb;
    }
    Mat12::from_diagonal(&d)
}

// ---------------------------------------------------------------------------
// Linearization and discretization
// ---------------------------------------------------------------------------

/// System matrix of the error-state dynamics at a nominal state.
/// `f_ib` is the bias-corrected specific force.
#[allow(non_snake_case)]
pub fn compute_F(state: &NavState, f_ib: &Vector3<f64>, earth: &EarthModel) -> Mat12 {
    let c = state.att.matrix();
    let (w_ie, w_en) = earth.rates(&state.pos, &state.vel);
    let j_en = earth.transport_rate_jacobian(&state.pos);

    let f_vv = skew(&state.vel) * j_en - skew(&(2.0 * w_ie + w_en));
    let f_ve = -skew(&(c * f_ib));
    let f_ev = -j_en;
    let f_ee = -skew(&(w_ie + w_en));

    let mut f = Mat12::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&f_vv);
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&f_ve);
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(c);
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&f_ev);
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(&f_ee);
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(c);
    f
}

/// Noise distribution matrix.
#[allow(non_snake_case)]
pub fn compute_G(att: &Dcm) -> Mat12 {
    let c = att.matrix();
    let mut g = Mat12::zeros();
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(c);
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(c);
    g.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(9, 9)
        .copy_from(&Matrix3::identity());
    g
}

/// Truncated power series `sum_{r=0}^{order} (F tau)^r / r!`.
pub fn transition_matrix(f: &Mat12, tau: f64, order: usize) -> Mat12 {
    let ft = f * tau;
    let mut phi = Mat12::identity();
    let mut term = Mat12::identity();
    for r in 1..=order.max(1) {
        term = term * ft / r as f64;
        phi += term;
    }
    phi
}

/// Trapezoidal discrete process noise `(Phi G Q G^T + G Q G^T Phi^T) dt / 2`.
pub fn discrete_q(phi: &Mat12, g: &Mat12, q_c: &Mat12, dt: f64) -> Mat12 {
    let gqg = g * q_c * g.transpose();
    let a = phi * gqg;
    symmetrize(&((a + a.transpose()) * (0.5 * dt)))
}

/// `P- = Phi P+ Phi^T + Q`, symmetrized.
pub fn predict(p_post: &Mat12, phi: &Mat12, q: &Mat12) -> Mat12 {
    symmetrize(&(phi * p_post * phi.transpose() + q))
}

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

/// `dz = C_n^b v_ins - v_dvl`.
pub fn innovation(state: &NavState, v_dvl_body: &Vector3<f64>) -> Vector3<f64> {
    state.att.transpose() * state.vel - v_dvl_body
}

#[allow(non_snake_case)]
pub fn compute_H(state: &NavState) -> Mat3x12 {
    let cnb = state.att.transpose();
    let mut h = Mat3x12::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&cnb);
    h.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(cnb * skew(&state.vel)));
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateResult {
    pub gain: Mat12x3,
    pub p_post: Mat12,
    pub dx: Vec12,
    /// Innovation covariance `H P- H^T + R`.
    pub s: Matrix3<f64>,
}

/// Kalman update with the simple covariance form `(I - K H) P-`.
pub fn update(
    p_prior: &Mat12,
    h: &Mat3x12,
    r: &Matrix3<f64>,
    dz: &Vector3<f64>,
) -> Result<UpdateResult> {
    let pht = p_prior * h.transpose();
    let s = symmetrize(&(h * pht + r));
    let s_inv = invert_spd3(&s, "innovation covariance")?;
    let gain = pht * s_inv;
    let p_post = symmetrize(&((Mat12::identity() - gain * h) * p_prior));
    Ok(UpdateResult {
        gain,
        p_post,
        dx: gain * dz,
        s,
    })
}

/// Feed the estimated error back into the navigation solution.
pub fn correct_ins(state: &NavState, dx: &Vec12) -> NavState {
    let dv = dx.fixed_rows::<3>(0).into_owned();
    let eps = dx.fixed_rows::<3>(3).into_owned();
    let att = (Matrix3::identity() - skew(&eps)) * state.att.matrix();
    NavState {
        pos: state.pos,
        vel: state.vel - dv,
        att: Dcm::from_matrix_unchecked(att).orthonormalized(),
        b_a: state.b_a + dx.fixed_rows::<3>(6),
        b_g: state.b_g + dx.fixed_rows::<3>(9),
    }
}

/// Nominal state perturbed by an error-state vector, i.e. the state whose
/// error relative to `truth` is `dx` under the conventions of this module.
pub fn apply_error(truth: &NavState, dx: &Vec12) -> NavState {
    let eps = dx.fixed_rows::<3>(3).into_owned();
    NavState {
        pos: truth.pos,
        vel: truth.vel + dx.fixed_rows::<3>(0),
        att: Dcm::from_matrix_unchecked(rotation_vector_to_matrix(&eps) * truth.att.matrix()),
        b_a: truth.b_a - dx.fixed_rows::<3>(6),
        b_g: truth.b_g - dx.fixed_rows::<3>(9),
    }
}

/// Error of `estimate` relative to `truth` (inverse of [`apply_error`]).
pub fn error_state(estimate: &NavState, truth: &NavState) -> Vec12 {
    let r = estimate.att.matrix() * truth.att.transpose();
    let eps = crate::nav::matrix_to_rotation_vector(&r);
    let mut dx = Vec12::zeros();
    dx.fixed_rows_mut::<3>(0)
        .copy_from(&(estimate.vel - truth.vel));
    dx.fixed_rows_mut::<3>(3).copy_from(&eps);
    dx.fixed_rows_mut::<3>(6)
        .copy_from(&(truth.b_a - estimate.b_a));
    dx.fixed_rows_mut::<3>(9)
        .copy_from(&(truth.b_g - estimate.b_g));
    dx
}

// ---------------------------------------------------------------------------
// Multi-rate runner
// ---------------------------------------------------------------------------

/// Body-frame DVL velocity at a measurement epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlVelocity {
    pub t: f64,
    pub v: Vector3<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SensorStreams {
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlVelocity>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterInit {
    pub state: NavState,
    pub p0: Mat12,
}

/// Rolling buffer of the most recent network input rows.
#[derive(Debug, Clone)]
pub struct InputWindow {
    capacity: usize,
    rows: VecDeque<[f64; INPUT_CHANNELS]>,
}

impl InputWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rows: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, row: [f64; INPUT_CHANNELS]) {
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows oldest first; an unfilled window is front-padded with its oldest row.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.capacity, INPUT_CHANNELS);
        let pad = self.capacity - self.rows.len();
        for i in 0..self.capacity {
            let row = if self.rows.is_empty() {
                [0.0; INPUT_CHANNELS]
            } else {
                self.rows[i.saturating_sub(pad)]
            };
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// What a process-noise policy sees after each measurement update.
pub struct UpdateContext<'a> {
    /// Number of updates performed so far, including this one.
    pub update_count: usize,
    pub innovation: &'a Vector3<f64>,
    pub gain: &'a Mat12x3,
    pub h: &'a Mat3x12,
    /// Posterior covariance at the previous update (start of the interval).
    pub p_start: &'a Mat12,
    pub p_post: &'a Mat12,
    /// Product of the transition matrices over the interval just closed.
    pub phi_interval: &'a Mat12,
    /// Nominal discrete Q from the last prediction step of the interval.
    pub nominal_q: &'a Mat12,
    /// Q applied during the interval, `None` when it was the nominal one.
    pub applied_q: Option<&'a Mat12>,
    pub window: &'a InputWindow,
}

/// Per-step process noise to use until the next update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDecision {
    pub applied: Mat12,
    /// Unscaled base estimate; equals `applied` for model-based policies.
    pub base: Mat12,
}

pub trait ProcessNoisePolicy {
    /// Return `None` to keep the nominal discretized Q.
    fn after_update(&mut self, ctx: &UpdateContext<'_>) -> Result<Option<NoiseDecision>>;
}

/// Constant process noise: the conventional ES-EKF.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedNoise;

impl ProcessNoisePolicy for FixedNoise {
    fn after_update(&mut self, _ctx: &UpdateContext<'_>) -> Result<Option<NoiseDecision>> {
        Ok(None)
    }
}

/// Everything the Kalman-informed loss needs to replay one update interval.
#[derive(Debug, Clone)]
pub struct FilterTrace {
    /// IMU epoch index of the update that closes the interval.
    pub epoch: usize,
    pub p_start: Mat12,
    pub phis: Vec<Mat12>,
    pub h: Mat3x12,
    pub r: Matrix3<f64>,
    pub dz: Vector3<f64>,
    /// INS velocity the innovation was formed against (pre-update).
    pub v_pre: Vector3<f64>,
    pub v_gt: Vector3<f64>,
    /// Base per-step Q in force during the interval (pre-scale).
    pub q_base: Mat12,
    /// False while the interval still ran on the nominal Q.
    pub adapted: bool,
    /// Network input window as of the start of the interval.
    pub input: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub epoch: usize,
    pub t: f64,
    pub innovation: Vector3<f64>,
    pub p_post: Mat12,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Truth velocity per IMU epoch; filled into traces.
    pub truth_velocity: Option<&'a [Vector3<f64>]>,
    /// Record a trace every `n` intervals (0 disables tracing).
    pub trace_stride: usize,
    /// Network input window length.
    pub window_len: usize,
}

impl<'a> RunOptions<'a> {
    pub fn plain() -> Self {
        Self {
            truth_velocity: None,
            trace_stride: 0,
            window_len: 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutput {
    /// One state per IMU epoch; index 0 is the initial state.
    pub states: Vec<NavState>,
    pub updates: Vec<UpdateRecord>,
    pub traces: Vec<FilterTrace>,
}

fn input_row(imu: &ImuSample, vel: &Vector3<f64>) -> [f64; INPUT_CHANNELS] {
    [
        imu.f.x, imu.f.y, imu.f.z, imu.w.x, imu.w.y, imu.w.z, vel.x, vel.y, vel.z,
    ]
}

/// Run the filter over a pair of time-aligned streams.
///
/// Predicts at every IMU epoch and updates whenever a DVL sample falls within
/// `tau_s / 2` of the current epoch.
pub fn run_filter<P: ProcessNoisePolicy + ?Sized>(
    streams: &SensorStreams,
    cfg: &FilterConfig,
    init: &FilterInit,
    policy: &mut P,
    opts: &RunOptions<'_>,
) -> Result<FilterOutput> {
    let imu = &streams.imu;
    let mut out = FilterOutput {
        states: Vec::with_capacity(imu.len()),
        ..Default::default()
    };
    let mut state = init.state;
    let mut p = symmetrize(&init.p0);
    out.states.push(state);

    let mut window = InputWindow::new(opts.window_len.max(1));
    let mut dvl_idx = 0;
    let mut q_applied: Option<NoiseDecision> = None;
    let mut p_start = p;
    let mut phi_interval = Mat12::identity();
    let mut nominal_q;
    let mut interval_phis: Vec<Mat12> = Vec::new();
    let mut interval_input: Option<DMatrix<f64>> = None;
    let mut update_count = 0usize;
    let tracing = opts.trace_stride > 0;
    let half_tau = 0.5 * cfg.tau_s;

    // DVL samples at or before the first epoch cannot be used.
    if let Some(first) = imu.first() {
        while dvl_idx < streams.dvl.len() && streams.dvl[dvl_idx].t < first.t + half_tau {
            dvl_idx += 1;
        }
    }

    for k in 0..imu.len().saturating_sub(1) {
        let dt = imu[k + 1].t - imu[k].t;
        let sample = imu[k].bias_corrected(&state.b_a, &state.b_g);

        let f = compute_F(&state, &sample.f, &cfg.earth);
        let phi = transition_matrix(&f, cfg.tau_s, cfg.series_order);
        let g = compute_G(&state.att);
        nominal_q = discrete_q(&phi, &g, &cfg.q_c, cfg.tau_s);
        let q = q_applied.as_ref().map_or(&nominal_q, |d| &d.applied);
        p = predict(&p, &phi, q);
        phi_interval = phi * phi_interval;
        if tracing {
            interval_phis.push(phi);
        }

        state = strapdown_step(&state, &sample, dt, &cfg.earth)?;
        window.push(input_row(&sample, &state.vel));

        let t_now = imu[k + 1].t;
        let mut measured = None;
        while dvl_idx < streams.dvl.len() && streams.dvl[dvl_idx].t < t_now - half_tau {
            dvl_idx += 1;
        }
        if dvl_idx < streams.dvl.len() && (streams.dvl[dvl_idx].t - t_now).abs() <= half_tau {
            measured = Some(streams.dvl[dvl_idx].v);
            dvl_idx += 1;
        }

        if let Some(v_dvl) = measured {
            let dz = innovation(&state, &v_dvl);
            let h = compute_H(&state);
            let upd = update(&p, &h, &cfg.r, &dz)?;
            let v_pre = state.vel;
            state = correct_ins(&state, &upd.dx);
            p = upd.p_post;
            update_count += 1;

            if tracing && update_count.is_multiple_of(opts.trace_stride) {
                let v_gt = opts
                    .truth_velocity
                    .and_then(|tv| tv.get(k + 1).copied())
                    .unwrap_or_else(|| Vector3::repeat(f64::NAN));
                out.traces.push(FilterTrace {
                    epoch: k + 1,
                    p_start,
                    phis: std::mem::take(&mut interval_phis),
                    h,
                    r: cfg.r,
                    dz,
                    v_pre,
                    v_gt,
                    q_base: q_applied.map_or(nominal_q, |d| d.base),
                    adapted: q_applied.is_some(),
                    input: interval_input.take().unwrap_or_else(|| window.to_matrix()),
                });
            }
            interval_phis.clear();

            let ctx = UpdateContext {
                update_count,
                innovation: &dz,
                gain: &upd.gain,
                h: &h,
                p_start: &p_start,
                p_post: &p,
                phi_interval: &phi_interval,
                nominal_q: &nominal_q,
                applied_q: q_applied.as_ref().map(|d| &d.applied),
                window: &window,
            };
            if let Some(decision) = policy.after_update(&ctx)? {
                q_applied = Some(decision);
            }
            out.updates.push(UpdateRecord {
                epoch: k + 1,
                t: t_now,
                innovation: dz,
                p_post: p,
            });
            p_start = p;
            phi_interval = Mat12::identity();
            if tracing {
                interval_input = Some(window.to_matrix());
            }
        }

        if !state.is_finite() || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("filter state at t = {t_now}")));
        }
        out.states.push(state);
    }
    Ok(out)
}

/// Conventional ES-EKF with constant process noise.
pub fn run_eskf(
    streams: &SensorStreams,
    cfg: &FilterConfig,
    init: &FilterInit,
    opts: &RunOptions<'_>,
) -> Result<FilterOutput> {
    run_filter(streams, cfg, init, &mut FixedNoise, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::{EulerAngles, GeodeticPosition};

    fn sample_state() -> NavState {
        NavState::new(
            GeodeticPosition::from_degrees(32.8, 34.9, -30.0),
            Vector3::new(1.4, -0.6, 0.1),
            Dcm::from_euler(EulerAngles::from_degrees(3.0, -2.0, 130.0)),
        )
    }

    #[test]
    fn f_bias_blocks_and_zero_rows() {
        let s = sample_state();
        let f = compute_F(&s, &Vector3::new(0.1, -0.2, -9.8), &EarthModel::default());
        assert_eq!(f.fixed_view::<3, 3>(0, 6).into_owned(), *s.att.matrix());
        assert_eq!(f.fixed_view::<3, 3>(3, 9).into_owned(), *s.att.matrix());
        assert_eq!(f.fixed_view::<3, 3>(0, 9).into_owned(), Matrix3::zeros());
        assert_eq!(f.fixed_view::<3, 3>(3, 6).into_owned(), Matrix3::zeros());
        assert!(f.rows(6, 6).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn g_layout() {
        let g = compute_G(&Dcm::identity());
        let i3 = Matrix3::identity();
        for (r, c) in [(0, 3), (3, 0), (6, 6), (9, 9)] {
            assert_eq!(g.fixed_view::<3, 3>(r, c).into_owned(), i3);
        }
        let nonzero = [(0, 3), (3, 0), (6, 6), (9, 9)];
        for br in 0..4 {
            for bc in 0..4 {
                if !nonzero.contains(&(br * 3, bc * 3)) {
                    assert!(g
                        .fixed_view::<3, 3>(br * 3, bc * 3)
                        .iter()
                        .all(|x| *x == 0.0));
                }
            }
        }
        let g = compute_G(&sample_state().att);
        assert!((g.transpose() * g - Mat12::identity()).norm() < 1e-12);
    }

    #[test]
    fn transition_series_truncation() {
        assert_eq!(
            transition_matrix(&Mat12::zeros(), 0.01, 2),
            Mat12::identity()
        );
        let f = compute_F(
            &sample_state(),
            &Vector3::new(0.0, 0.0, -9.8),
            &EarthModel::default(),
        );
        assert_eq!(transition_matrix(&f, 0.01, 1), Mat12::identity() + f * 0.01);
    }

    #[test]
    fn discrete_q_identity_case() {
        let q_c = Mat12::from_diagonal(&Vec12::from_fn(|i, _| (i + 1) as f64));
        let q = discrete_q(&Mat12::identity(), &Mat12::identity(), &q_c, 0.01);
        assert!((q - q_c * 0.01).norm() < 1e-15);
        let s = sample_state();
        let f = compute_F(&s, &Vector3::new(0.0, 0.0, -9.8), &EarthModel::default());
        let q = discrete_q(
            &transition_matrix(&f, 0.01, 2),
            &compute_G(&s.att),
            &q_c,
            0.01,
        );
        assert_eq!(q, q.transpose());
    }

    #[test]
    fn predict_examples() {
        let p = Mat12::identity() * 2.0;
        assert_eq!(predict(&p, &Mat12::identity(), &Mat12::zeros()), p);
        let q = Mat12::identity() * 1e-3;
        assert!(predict(&p, &Mat12::identity(), &q).trace() > p.trace());
    }

    #[test]
    fn innovation_examples() {
        let mut s = sample_state();
        let v_body = s.att.transpose() * s.vel;
        assert!(innovation(&s, &v_body).norm() < 1e-15);
        s.att = Dcm::identity();
        s.vel = Vector3::x();
        assert_eq!(innovation(&s, &Vector3::zeros()), Vector3::x());
    }

    #[test]
    fn h_structure() {
        let mut s = sample_state();
        let h = compute_H(&s);
        assert!(h.columns(6, 6).iter().all(|x| *x == 0.0));
        s.att = Dcm::identity();
        s.vel = Vector3::zeros();
        let mut expected = Mat3x12::zeros();
        expected
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        assert_eq!(compute_H(&s), expected);
    }

    #[test]
    fn update_examples() {
        let mut h = Mat3x12::zeros();
        h.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        let u = update(
            &Mat12::identity(),
            &h,
            &Matrix3::identity(),
            &Vector3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        assert!((u.gain.fixed_view::<3, 3>(0, 0) - Matrix3::identity() * 0.5).norm() < 1e-15);
        assert!(u.p_post.trace() <= 12.0);

        let u = update(
            &Mat12::identity(),
            &h,
            &(Matrix3::identity() * 1e12),
            &Vector3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        assert!(u.gain.norm() <= 1e-9);
        assert!(u.dx.norm() <= 1e-8);
    }

    #[test]
    fn ill_conditioned_update_reported() {
        let h = Mat3x12::zeros();
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1e-14));
        assert!(matches!(
            update(&Mat12::identity(), &h, &r, &Vector3::zeros()),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn correction_examples() {
        let s = sample_state();
        assert_eq!(correct_ins(&s, &Vec12::zeros()).vel, s.vel);
        let mut dx = Vec12::zeros();
        dx[0] = 1.0;
        let c = correct_ins(&s, &dx);
        assert_eq!(c.vel, s.vel - Vector3::x());
        let mut dx = Vec12::zeros();
        dx[3] = 5e-4;
        let raw = (Matrix3::identity() - skew(&Vector3::new(5e-4, 0.0, 0.0))) * s.att.matrix();
        let defect = (raw.transpose() * raw - Matrix3::identity()).norm();
        assert!(defect <= 1e-6);
        assert!(correct_ins(&s, &dx).att.orthonormality_defect() < 1e-12);
        let mut dx = Vec12::zeros();
        dx[6] = 0.01;
        dx[11] = -1e-5;
        let c = correct_ins(&s, &dx);
        assert_eq!(c.b_a.x, 0.01);
        assert_eq!(c.b_g.z, -1e-5);
    }

    #[test]
    fn error_state_round_trip() {
        let s = sample_state();
        let dx = Vec12::from_fn(|i, _| 1e-3 * (i as f64 - 5.5));
        let e = apply_error(&s, &dx);
        assert!((error_state(&e, &s) - dx).norm() < 1e-12);
    }

    #[test]
    fn window_pads_and_rolls() {
        let mut w = InputWindow::new(3);
        assert_eq!(w.to_matrix(), DMatrix::zeros(3, INPUT_CHANNELS));
        w.push([1.0; INPUT_CHANNELS]);
        assert_eq!(w.to_matrix()[(0, 0)], 1.0);
        for v in 2..=4 {
            w.push([v as f64; INPUT_CHANNELS]);
        }
        assert!(w.is_full());
        let m = w.to_matrix();
        assert_eq!((m[(0, 0)], m[(2, 8)]), (2.0, 4.0));
    }
}

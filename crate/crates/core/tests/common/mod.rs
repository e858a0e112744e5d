//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use akit::adaptive::AdaptiveConfig;
use akit::akit::collect_traces;
use akit::eskf::{apply_error, innovation, FilterConfig, FilterInit, FilterTrace};
use akit::harness::mc::{filter_config_for, standard_normal12, InitFamily};
use akit::harness::scenario::{generate_scenario, Scenario, ScenarioSpec};
use akit::linalg::{Mat12, Vec12};
use akit::nav::{rotation_vector_to_matrix, vee, Dcm, EarthModel, EulerAngles, GeodeticPosition};
use akit::strapdown::{attitude_rate, velocity_rate, NavState};
use akit::transformer::{SetTransformer, Standardizer, TransformerConfig};
use nalgebra::{SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn nominal() -> (NavState, Vector3<f64>, Vector3<f64>) {
    let mut s = NavState::new(
        GeodeticPosition::from_degrees(41.3, -70.2, -55.0),
        Vector3::new(2.1, -1.3, 0.4),
        Dcm::from_euler(EulerAngles::from_degrees(4.0, -7.0, 212.0)),
    );
    s.b_a = Vector3::new(0.02, -0.01, 0.03);
    s.b_g = Vector3::new(1e-4, -2e-4, 5e-5);
    (
        s,
        Vector3::new(0.3, -0.2, -9.75),
        Vector3::new(0.02, -0.01, 0.05),
    )
}

/// Random estimate plus the specific force and rate used for propagation.
pub fn random_state<R: Rng>(rng: &mut R) -> (NavState, Vector3<f64>, Vector3<f64>) {
    let mut u = |a: f64| rng.random_range(-a..a);
    let mut s = NavState::new(
        GeodeticPosition::from_degrees(u(60.0), u(180.0), -u(300.0).abs()),
        Vector3::new(u(3.0), u(3.0), u(0.5)),
        Dcm::from_euler(EulerAngles::from_degrees(u(25.0), u(25.0), u(180.0))),
    );
    s.b_a = Vector3::new(u(0.05), u(0.05), u(0.05));
    s.b_g = Vector3::new(u(1e-4), u(1e-4), u(1e-4));
    let f = Vector3::new(u(1.0), u(1.0), -9.8 + u(0.5));
    let w = Vector3::new(u(0.1), u(0.1), u(0.1));
    (s, f, w)
}

/// True state implied by an estimate and an error vector.
pub fn truth_from(est: &NavState, dx: &Vec12) -> NavState {
    let eps: Vector3<f64> = dx.fixed_rows::<3>(3).into_owned();
    NavState {
        pos: est.pos,
        vel: est.vel - dx.fixed_rows::<3>(0),
        att: Dcm::from_matrix_unchecked(rotation_vector_to_matrix(&-eps) * est.att.matrix()),
        b_a: est.b_a + dx.fixed_rows::<3>(6),
        b_g: est.b_g + dx.fixed_rows::<3>(9),
    }
}

/// Nonlinear error-state derivative, obtained by differentiating the
/// estimated and true trajectories separately.
pub fn error_rate(
    est: &NavState,
    f_used: &Vector3<f64>,
    w_used: &Vector3<f64>,
    dx: &Vec12,
) -> Vec12 {
    let e = EarthModel::default();
    let t = truth_from(est, dx);
    let f_true = f_used - dx.fixed_rows::<3>(6);
    let w_true = w_used - dx.fixed_rows::<3>(9);

    let dv_dot = velocity_rate(est, f_used, &e) - velocity_rate(&t, &f_true, &e);
    let (wie_e, wen_e) = e.rates(&est.pos, &est.vel);
    let (wie_t, wen_t) = e.rates(&t.pos, &t.vel);
    let ce_dot = attitude_rate(&est.att, w_used, &wie_e, &wen_e);
    let ct_dot = attitude_rate(&t.att, &w_true, &wie_t, &wen_t);
    let r = est.att.matrix() * t.att.transpose();
    let r_dot = ce_dot * t.att.transpose() + est.att.matrix() * ct_dot.transpose();
    let eps_dot = vee(&(r_dot * r.transpose()));

    let mut out = Vec12::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&dv_dot);
    out.fixed_rows_mut::<3>(3).copy_from(&eps_dot);
    out
}

/// Innovation of a noiseless DVL on the true state implied by `dx`.
pub fn measurement_residual(est: &NavState, dx: &Vec12) -> Vector3<f64> {
    let t = truth_from(est, dx);
    innovation(est, &(t.att.transpose() * t.vel))
}

fn central<const M: usize>(
    f: &impl Fn(&Vec12) -> SMatrix<f64, M, 1>,
    i: usize,
    h: f64,
) -> SMatrix<f64, M, 1> {
    let mut dp = Vec12::zeros();
    dp[i] = h;
    (f(&dp) - f(&-dp)) / (2.0 * h)
}

/// Central differences with a step per column. Columns in which the map is
/// at most quadratic use a large step (exact up to rounding); the attitude
/// columns use one Richardson extrapolation.
pub fn jacobian<const M: usize>(f: impl Fn(&Vec12) -> SMatrix<f64, M, 1>) -> SMatrix<f64, M, 12> {
    let mut j = SMatrix::<f64, M, 12>::zeros();
    for i in 0..12 {
        let col = if (3..6).contains(&i) {
            let h = 1e-3;
            (central(&f, i, h / 2.0) * 4.0 - central(&f, i, h)) / 3.0
        } else {
            central(&f, i, 1e-2)
        };
        j.set_column(i, &col);
    }
    j
}

/// Largest elementwise violation of `|a - n| <= rel |a| + abs`, as a ratio
/// (<= 1 passes).
pub fn worst_ratio<const R: usize, const C: usize>(
    a: &SMatrix<f64, R, C>,
    n: &SMatrix<f64, R, C>,
    rel: f64,
    abs: f64,
) -> f64 {
    a.iter()
        .zip(n.iter())
        .map(|(a, n)| (a - n).abs() / (rel * a.abs() + abs))
        .fold(0.0, f64::max)
}

/// Scaling-and-squaring matrix exponential with a long Taylor series.
pub fn expm(a: &Mat12) -> Mat12 {
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut term = Mat12::identity();
    let mut sum = Mat12::identity();
    for k in 1..30 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Exact discretization of `G Q G^T` via the block-matrix exponential.
pub fn van_loan(f: &Mat12, gqg: &Mat12, dt: f64) -> (Mat12, Mat12) {
    let mut m = SMatrix::<f64, 24, 24>::zeros();
    m.fixed_view_mut::<12, 12>(0, 0).copy_from(&(-f * dt));
    m.fixed_view_mut::<12, 12>(0, 12).copy_from(&(gqg * dt));
    m.fixed_view_mut::<12, 12>(12, 12)
        .copy_from(&(f.transpose() * dt));
    let mut term = SMatrix::<f64, 24, 24>::identity();
    let mut e = SMatrix::<f64, 24, 24>::identity();
    for k in 1..30 {
        term = term * m / k as f64;
        e += term;
    }
    let phi = e.fixed_view::<12, 12>(12, 12).transpose();
    let q = phi * e.fixed_view::<12, 12>(0, 12).into_owned();
    (phi, q)
}

/// Sum of squares with Neumaier compensation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Root mean squared vector error from a compensated direct sum.
pub fn direct_rmse(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let terms = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |i| (x[i] - y[i]) * (x[i] - y[i])));
    (compensated_sum(terms) / a.len() as f64).sqrt()
}

/// Short stepped-noise lawnmower with an initial error drawn from the
/// adaptive filters' family.
pub fn setup(seconds: f64, seed: u64) -> (Scenario, FilterConfig, FilterInit) {
    let spec =
        ScenarioSpec::lawnmower("akit", seconds, 15.0, 4.0).with_noise_step(seconds / 2.0, 5.0);
    let sc = generate_scenario(&spec, seed).unwrap();
    let cfg = filter_config_for(&spec).unwrap();
    let family = InitFamily::aekf_default();
    let init = FilterInit {
        state: apply_error(&sc.truth[0], &family.sample(&standard_normal12(seed))),
        p0: family.p0(),
    };
    (sc, cfg, init)
}

/// Adapted training traces of one [`setup`] mission.
pub fn traces(seconds: f64, seed: u64) -> Vec<FilterTrace> {
    let (sc, cfg, init) = setup(seconds, seed);
    let tv = sc.truth_velocity();
    collect_traces(
        &sc.streams,
        &tv,
        &cfg,
        &init,
        &AdaptiveConfig::default(),
        1,
        100,
    )
    .unwrap()
}

/// Network with its input standardization fitted and every parameter moved
/// off the initial value.
pub fn perturbed(traces: &[FilterTrace], seed: u64) -> SetTransformer {
    let mut net = SetTransformer::new(TransformerConfig::default(), seed).unwrap();
    net.standardizer = Standardizer::fit(traces.iter().map(|t| &t.input), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in net.params.tensors.iter_mut() {
        t.apply(|v| *v += rng.random_range(-0.02..0.02));
    }
    net
}

/// Ridders' polynomial extrapolation of central differences with shrinking
/// steps starting at `h`. Returns the derivative and an error estimate.
pub fn ridders(f: impl Fn(f64) -> f64, h: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const N: usize = 10;
    let mut a = [[0.0f64; N]; N];
    let mut hh = h;
    a[0][0] = (f(hh) - f(-hh)) / (2.0 * hh);
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    for i in 1..N {
        hh /= CON;
        a[0][i] = (f(hh) - f(-hh)) / (2.0 * hh);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

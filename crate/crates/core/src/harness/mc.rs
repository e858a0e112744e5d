//! Monte-Carlo study: paired comparison of filters over random initial
//! errors and sensor realizations, plus a covariance-consistency study.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::units::{deg_per_hour_to_rad_per_s, mg_to_mps2};
use super::metrics::{cumulative_mean, median, prmse, vrmse};
use super::scenario::{corrupt, Scenario, ScenarioSpec, Truth};
use crate::adaptive::{run_aekf, AdaptiveConfig, AdaptiveVariant};
use crate::akit::{run_akit, AkitModel};
use crate::eskf::{
    apply_error, error_state, run_eskf, FilterConfig, FilterInit, FilterOutput, RunOptions,
};
use crate::linalg::{Mat12, Vec12};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ekf,
    Aekf1,
    Aekf2,
    Aekf3,
    Akit,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ekf,
        Method::Aekf1,
        Method::Aekf2,
        Method::Aekf3,
        Method::Akit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ekf => "ekf",
            Method::Aekf1 => "aekf1",
            Method::Aekf2 => "aekf2",
            Method::Aekf3 => "aekf3",
            Method::Akit => "akit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn adaptive_variant(self) -> Option<AdaptiveVariant> {
        match self {
            Method::Aekf1 | Method::Akit => Some(AdaptiveVariant::Iae),
            Method::Aekf2 => Some(AdaptiveVariant::Scaling),
            Method::Aekf3 => Some(AdaptiveVariant::Forgetting),
            Method::Ekf => None,
        }
    }
}

/// Run one filter variant. `model` is required for [`Method::Akit`].
pub fn run_method(
    method: Method,
    scenario_streams: &crate::eskf::SensorStreams,
    cfg: &FilterConfig,
    init: &FilterInit,
    adaptive: &AdaptiveConfig,
    model: Option<&AkitModel>,
    opts: &RunOptions<'_>,
) -> Result<FilterOutput> {
    match method {
        Method::Ekf => run_eskf(scenario_streams, cfg, init, opts),
        Method::Akit => {
            let model = model
                .ok_or_else(|| Error::InvalidParameter("akit needs a trained model".into()))?;
            run_akit(model, adaptive, scenario_streams, cfg, init, opts)
        }
        m => {
            let a = AdaptiveConfig {
                variant: m.adaptive_variant().expect("adaptive method"),
                ..*adaptive
            };
            run_aekf(&a, scenario_streams, cfg, init, opts)
        }
    }
}

/// Initial-error distribution in engineering units: velocity m/s, attitude
/// deg, accelerometer bias mg, gyro bias deg/hr. Each entry applies to all
/// three axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub velocity: f64,
    pub attitude_deg: f64,
    pub accel_bias_mg: f64,
    pub gyro_bias_deg_hr: f64,
}

impl ErrorBudget {
    pub fn to_si(&self) -> Vec12 {
        let per_block = [
            self.velocity,
            self.attitude_deg.to_radians(),
            mg_to_mps2(self.accel_bias_mg),
            deg_per_hour_to_rad_per_s(self.gyro_bias_deg_hr),
        ];
        Vec12::from_fn(|i, _| per_block[i / 3])
    }

    pub fn zero() -> Self {
        Self {
            velocity: 0.0,
            attitude_deg: 0.0,
            accel_bias_mg: 0.0,
            gyro_bias_deg_hr: 0.0,
        }
    }
}

/// Mean of the true initial error and the filter's initial standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitFamily {
    pub mean: ErrorBudget,
    pub std: ErrorBudget,
}

impl InitFamily {
    pub fn ekf_default() -> Self {
        Self {
            mean: ErrorBudget {
                velocity: 0.1,
                attitude_deg: 2.5,
                accel_bias_mg: 15.0,
                gyro_bias_deg_hr: 15.0,
            },
            std: ErrorBudget {
                velocity: 0.2,
                attitude_deg: 5.0,
                accel_bias_mg: 30.0,
                gyro_bias_deg_hr: 30.0,
            },
        }
    }

    pub fn aekf_default() -> Self {
        Self {
            mean: ErrorBudget {
                velocity: 0.1,
                attitude_deg: 0.5,
                accel_bias_mg: 15.0,
                gyro_bias_deg_hr: 0.5,
            },
            std: ErrorBudget {
                velocity: 0.2,
                attitude_deg: 1.0,
                accel_bias_mg: 30.0,
                gyro_bias_deg_hr: 1.0,
            },
        }
    }

    pub fn p0(&self) -> Mat12 {
        let s = self.std.to_si();
        Mat12::from_diagonal(&s.component_mul(&s))
    }

    /// Initial error for a standard-normal draw `z`.
    pub fn sample(&self, z: &Vec12) -> Vec12 {
        self.mean.to_si() + self.std.to_si().component_mul(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub runs: usize,
    pub seed: u64,
    pub ekf_family: InitFamily,
    pub aekf_family: InitFamily,
    pub adaptive: AdaptiveConfig,
    /// Velocity error above which a run counts as diverged, m/s.
    pub divergence_velocity: f64,
    /// Decimation of the exported trajectory traces (IMU epochs per row).
    pub trace_decimation: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            seed: 0,
            ekf_family: InitFamily::ekf_default(),
            aekf_family: InitFamily::aekf_default(),
            adaptive: AdaptiveConfig::default(),
            divergence_velocity: 1e3,
            trace_decimation: 100,
        }
    }
}

impl McConfig {
    pub fn family(&self, m: Method) -> &InitFamily {
        if m == Method::Ekf {
            &self.ekf_family
        } else {
            &self.aekf_family
        }
    }
}

/// Independent, reproducible seed for run `r`.
pub fn run_seed(seed: u64, r: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ (r as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal12(seed: u64) -> Vec12 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vec12::from_fn(|_, _| StandardNormal.sample(&mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub vrmse: f64,
    pub prmse: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_vrmse: f64,
    pub median_vrmse: f64,
    pub mean_prmse: f64,
    pub median_prmse: f64,
    pub diverged: usize,
    /// Running mean of VRMSE over the converged runs, in run order.
    pub cumulative_vrmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    /// Velocity error norm per method, same order as `RunReport::methods`.
    pub velocity_error: Vec<f64>,
    pub position_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub methods: Vec<Method>,
    /// `runs[r][m]` is the result of method `m` in run `r`.
    pub runs: Vec<Vec<MethodResult>>,
    pub summary: Vec<MethodSummary>,
    /// Error traces of the first run.
    pub traces: Vec<TraceRow>,
}

impl RunReport {
    pub fn column(&self, m: Method) -> Option<Vec<MethodResult>> {
        let i = self.methods.iter().position(|x| *x == m)?;
        Some(self.runs.iter().map(|r| r[i]).collect())
    }

    pub fn summary_of(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    /// Fraction of runs in which `a` has strictly lower VRMSE than `b`.
    pub fn win_rate(&self, a: Method, b: Method) -> Option<f64> {
        let ca = self.column(a)?;
        let cb = self.column(b)?;
        let wins = ca
            .iter()
            .zip(&cb)
            .filter(|(x, y)| !x.diverged && (y.diverged || x.vrmse < y.vrmse))
            .count();
        Some(wins as f64 / ca.len().max(1) as f64)
    }
}

struct RunOutcome {
    results: Vec<MethodResult>,
    traces: Option<Vec<TraceRow>>,
}

fn evaluate(
    scenario: &Scenario,
    out: &Result<FilterOutput>,
    divergence_velocity: f64,
) -> (MethodResult, Option<FilterOutput>) {
    let diverged = MethodResult {
        vrmse: f64::NAN,
        prmse: f64::NAN,
        diverged: true,
    };
    let Ok(out) = out else {
        return (diverged, None);
    };
    if out.states.len() != scenario.truth.len() {
        return (diverged, None);
    }
    let v_err_max = out
        .states
        .iter()
        .zip(&scenario.truth)
        .map(|(e, t)| (e.vel - t.vel).norm())
        .fold(0.0, f64::max);
    if !(v_err_max <= divergence_velocity) {
        return (diverged, None);
    }
    let vt: Vec<Vector3<f64>> = scenario.truth.iter().map(|s| s.vel).collect();
    let ve: Vec<Vector3<f64>> = out.states.iter().map(|s| s.vel).collect();
    let pt: Vec<_> = scenario.truth.iter().map(|s| s.pos).collect();
    let pe: Vec<_> = out.states.iter().map(|s| s.pos).collect();
    (
        MethodResult {
            vrmse: vrmse(&vt, &ve).unwrap_or(f64::NAN),
            prmse: prmse(&pt, &pe).unwrap_or(f64::NAN),
            diverged: false,
        },
        Some(out.clone()),
    )
}

fn one_run(
    r: usize,
    methods: &[Method],
    spec: &ScenarioSpec,
    truth: &Truth,
    cfg: &FilterConfig,
    mc: &McConfig,
    model: Option<&AkitModel>,
) -> Result<RunOutcome> {
    let seed = run_seed(mc.seed, r);
    let scenario = corrupt(spec, truth, seed)?;
    let z = standard_normal12(seed ^ 0x5A5A_5A5A);
    let mut results = Vec::with_capacity(methods.len());
    let mut outputs = Vec::with_capacity(methods.len());
    for &m in methods {
        let family = mc.family(m);
        let init = FilterInit {
            state: apply_error(&scenario.truth[0], &family.sample(&z)),
            p0: family.p0(),
        };
        let out = run_method(
            m,
            &scenario.streams,
            cfg,
            &init,
            &mc.adaptive,
            model,
            &RunOptions::plain(),
        );
        if let Err(e) = &out {
            if !e.is_numeric() && !matches!(e, Error::InvalidParameter(_)) {
                return Err(Error::InvalidParameter(format!("{}: {e}", m.name())));
            }
        }
        let (res, kept) = evaluate(&scenario, &out, mc.divergence_velocity);
        results.push(res);
        outputs.push(kept);
    }
    let traces = (r == 0).then(|| trace_rows(&scenario, &outputs, mc.trace_decimation.max(1)));
    Ok(RunOutcome { results, traces })
}

fn trace_rows(scenario: &Scenario, outputs: &[Option<FilterOutput>], step: usize) -> Vec<TraceRow> {
    let frame = super::metrics::LocalTangent::new(
        scenario.truth[0].pos,
        &crate::nav::EarthModel::default(),
    );
    (0..scenario.truth.len())
        .step_by(step)
        .map(|k| {
            let t = &scenario.truth[k];
            let (mut ve, mut pe) = (Vec::new(), Vec::new());
            for o in outputs {
                match o {
                    Some(o) => {
                        ve.push((o.states[k].vel - t.vel).norm());
                        pe.push((frame.to_ned(&o.states[k].pos) - frame.to_ned(&t.pos)).norm());
                    }
                    None => {
                        ve.push(f64::NAN);
                        pe.push(f64::NAN);
                    }
                }
            }
            TraceRow {
                t: scenario.imu[k].t,
                velocity_error: ve,
                position_error: pe,
            }
        })
        .collect()
}

fn summarize(method: Method, col: &[MethodResult]) -> MethodSummary {
    let ok: Vec<&MethodResult> = col.iter().filter(|r| !r.diverged).collect();
    let v: Vec<f64> = ok.iter().map(|r| r.vrmse).collect();
    let p: Vec<f64> = ok.iter().map(|r| r.prmse).collect();
    let mean = |x: &[f64]| {
        if x.is_empty() {
            f64::NAN
        } else {
            x.iter().sum::<f64>() / x.len() as f64
        }
    };
    MethodSummary {
        method,
        mean_vrmse: mean(&v),
        median_vrmse: median(&v).unwrap_or(f64::NAN),
        mean_prmse: mean(&p),
        median_prmse: median(&p).unwrap_or(f64::NAN),
        diverged: col.len() - ok.len(),
        cumulative_vrmse: cumulative_mean(&v),
    }
}

/// Paired Monte-Carlo comparison on one mission. All methods in a run share
/// the sensor realization and the standard-normal draw behind the initial
/// error; each method family scales that draw by its own budget.
pub fn run_monte_carlo(
    methods: &[Method],
    spec: &ScenarioSpec,
    mc: &McConfig,
    model: Option<&AkitModel>,
) -> Result<RunReport> {
    if mc.runs == 0 || methods.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one run and one method".into(),
        ));
    }
    mc.adaptive.validate()?;
    if methods.contains(&Method::Akit) && model.is_none() {
        return Err(Error::InvalidParameter("akit needs a trained model".into()));
    }
    let truth = super::scenario::simulate_truth(spec)?;
    let cfg = filter_config_for(spec)?;

    let job = |r: usize| one_run(r, methods, spec, &truth, &cfg, mc, model);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<RunOutcome>> = {
        use rayon::prelude::*;
        (0..mc.runs).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<RunOutcome>> = (0..mc.runs).map(job).collect();

    let mut runs = Vec::with_capacity(mc.runs);
    let mut traces = Vec::new();
    for o in outcomes {
        let o = o?;
        if let Some(t) = o.traces {
            traces = t;
        }
        runs.push(o.results);
    }
    let summary = methods
        .iter()
        .enumerate()
        .map(|(i, &m)| summarize(m, &runs.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect();
    Ok(RunReport {
        scenario: spec.name.clone(),
        methods: methods.to_vec(),
        runs,
        summary,
        traces,
    })
}

/// Filter noise matched to the mission's nominal (unscheduled) sensor grade.
pub fn filter_config_for(spec: &ScenarioSpec) -> Result<FilterConfig> {
    FilterConfig::from_models(
        &spec.imu,
        &spec.dvl.config(),
        spec.dvl.sigma_beam,
        spec.dt(),
    )
}

/// JSON summary plus plot-ready CSV traces.
pub fn export_report(report: &RunReport, dir: &Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;

    let names: Vec<&str> = report.methods.iter().map(|m| m.name()).collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("traces.csv"))?);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names.iter().map(|n| format!("verr_{n}")))
        .chain(names.iter().map(|n| format!("perr_{n}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for row in &report.traces {
        let cells: Vec<String> = std::iter::once(row.t)
            .chain(row.velocity_error.iter().copied())
            .chain(row.position_error.iter().copied())
            .map(|v| format!("{v}"))
            .collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("cumulative.csv"))?);
    writeln!(f, "run,{}", names.join(","))?;
    for r in 0..report.runs.len() {
        let cells: Vec<String> = report
            .summary
            .iter()
            .map(|s| {
                s.cumulative_vrmse
                    .get(r)
                    .map_or(String::new(), |v| format!("{v}"))
            })
            .collect();
        writeln!(f, "{},{}", r + 1, cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Per-epoch consistency statistics of the conventional filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeesReport {
    pub runs: usize,
    /// Update epochs evaluated per run.
    pub epochs: usize,
    /// Run-averaged NEES at each update epoch.
    pub mean_nees: Vec<f64>,
    /// Fraction of single-run NEES samples inside the two-sided 95% band.
    pub fraction_in_band: f64,
    /// Fraction of epochs whose run-averaged NEES lies in the averaged band.
    pub fraction_mean_in_band: f64,
    pub band: (f64, f64),
    pub mean_band: (f64, f64),
    /// Largest relative asymmetry and most negative eigenvalue of any P.
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
}

/// NEES of the post-update error state. Initial errors are drawn from the
/// filter's own `P0` and the noise model is matched, so the 12-dof NEES should
/// be chi-square distributed.
pub fn nees_study(
    spec: &ScenarioSpec,
    p0_std: &ErrorBudget,
    runs: usize,
    seed: u64,
) -> Result<NeesReport> {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let truth = super::scenario::simulate_truth(spec)?;
    let cfg = filter_config_for(spec)?;
    let sigma = p0_std.to_si();
    let p0 = Mat12::from_diagonal(&sigma.component_mul(&sigma));

    let job = |r: usize| -> Result<(Vec<f64>, f64, f64)> {
        let s = run_seed(seed, r);
        let scenario = corrupt(spec, &truth, s)?;
        let dx0 = sigma.component_mul(&standard_normal12(s ^ 0xA5A5));
        let init = FilterInit {
            state: apply_error(&scenario.truth[0], &dx0),
            p0,
        };
        let out = run_eskf(&scenario.streams, &cfg, &init, &RunOptions::plain())?;
        let mut nees = Vec::with_capacity(out.updates.len());
        let (mut asym, mut min_eig) = (0.0f64, f64::INFINITY);
        for u in &out.updates {
            let e = error_state(&out.states[u.epoch], &scenario.truth[u.epoch]);
            let chol = u.p_post.cholesky().ok_or_else(|| {
                Error::NonFinite("posterior covariance not positive definite".into())
            })?;
            nees.push(e.dot(&chol.solve(&e)));
            asym = asym.max(crate::linalg::asymmetry(&u.p_post));
            min_eig = min_eig.min(crate::linalg::min_eigenvalue(&u.p_post));
        }
        Ok((nees, asym, min_eig))
    };
    #[cfg(feature = "parallel")]
    let per_run: Vec<Result<(Vec<f64>, f64, f64)>> = {
        use rayon::prelude::*;
        (0..runs).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_run: Vec<Result<(Vec<f64>, f64, f64)>> = (0..runs).map(job).collect();
    let per_run = per_run.into_iter().collect::<Result<Vec<_>>>()?;

    let dof = 12.0;
    let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let band = (chi.inverse_cdf(0.025), chi.inverse_cdf(0.975));
    let chi_n =
        ChiSquared::new(dof * runs as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mean_band = (
        chi_n.inverse_cdf(0.025) / runs as f64,
        chi_n.inverse_cdf(0.975) / runs as f64,
    );
    let epochs = per_run.iter().map(|r| r.0.len()).min().unwrap_or(0);
    let mut mean_nees = vec![0.0; epochs];
    let mut inside = 0usize;
    for (nees, _, _) in &per_run {
        for (k, v) in nees.iter().take(epochs).enumerate() {
            mean_nees[k] += v / runs as f64;
            if (band.0..=band.1).contains(v) {
                inside += 1;
            }
        }
    }
    let mean_inside = mean_nees
        .iter()
        .filter(|v| (mean_band.0..=mean_band.1).contains(*v))
        .count();
    Ok(NeesReport {
        runs,
        epochs,
        fraction_in_band: inside as f64 / (epochs * runs).max(1) as f64,
        fraction_mean_in_band: mean_inside as f64 / epochs.max(1) as f64,
        mean_nees,
        band,
        mean_band,
        max_asymmetry: per_run.iter().map(|r| r.1).fold(0.0, f64::max),
        min_eigenvalue: per_run.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
    })
}

//! End-to-end training on simulated missions: trace collection with the
//! innovation-adaptive filter, optimization of the Kalman-informed loss and
//! checkpoint selection by closed-loop velocity error on validation runs.

use serde::{Deserialize, Serialize};

use super::mc::{filter_config_for, run_seed, standard_normal12, InitFamily};
use super::metrics::{median, vrmse};
use super::scenario::{generate_scenario, ScenarioSpec};
use crate::adaptive::AdaptiveConfig;
use crate::akit::{baseline_loss, collect_traces, run_akit, train_with, AkitModel, TrainingConfig};
use crate::eskf::{apply_error, FilterInit, FilterTrace, RunOptions};
use crate::transformer::{SetTransformer, TransformerConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub training: TrainingConfig,
    pub network: TransformerConfig,
    pub adaptive: AdaptiveConfig,
    pub init: InitFamily,
    /// Sensor realizations per mission used for trace collection.
    pub realizations: usize,
    /// Closed-loop validation runs per mission; zero keeps the last epoch.
    pub validation_runs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            network: TransformerConfig::default(),
            adaptive: AdaptiveConfig::default(),
            init: InitFamily::aekf_default(),
            realizations: 1,
            validation_runs: 0,
        }
    }
}

impl FitConfig {
    /// Short schedule that fits a desk-top budget on the built-in suite.
    pub fn desk() -> Self {
        Self {
            training: TrainingConfig {
                epochs: 8,
                batch_size: 32,
                learning_rate: 1e-3,
                trace_stride: 4,
                ..TrainingConfig::default()
            },
            validation_runs: 1,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Median closed-loop VRMSE on the validation runs, m/s.
    pub validation_vrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub traces: usize,
    pub baseline_loss: f64,
    pub initial_validation_vrmse: Option<f64>,
    pub history: Vec<EpochRecord>,
    /// Selected epoch; `None` means the untrained network was kept.
    pub best_epoch: Option<usize>,
}

/// Training traces from one innovation-adaptive run per mission and
/// realization. Seeds are derived from `seed`.
pub fn build_traces(
    missions: &[ScenarioSpec],
    cfg: &FitConfig,
    seed: u64,
) -> Result<Vec<FilterTrace>> {
    let mut traces = Vec::new();
    for (i, spec) in missions.iter().enumerate() {
        let fc = filter_config_for(spec)?;
        for r in 0..cfg.realizations.max(1) {
            let s = run_seed(seed, i * 1000 + r);
            let sc = generate_scenario(spec, s)?;
            let init = FilterInit {
                state: apply_error(
                    &sc.truth[0],
                    &cfg.init.sample(&standard_normal12(s ^ 0x5A5A_5A5A)),
                ),
                p0: cfg.init.p0(),
            };
            let tv = sc.truth_velocity();
            traces.extend(collect_traces(
                &sc.streams,
                &tv,
                &fc,
                &init,
                &cfg.adaptive,
                cfg.training.trace_stride,
                cfg.network.window,
            )?);
        }
    }
    Ok(traces)
}

/// Median closed-loop VRMSE of the learned filter over `runs` realizations of
/// every mission. Failed runs count as infinite error.
pub fn validation_vrmse(
    model: &AkitModel,
    missions: &[ScenarioSpec],
    cfg: &FitConfig,
    runs: usize,
    seed: u64,
) -> Result<f64> {
    let mut scores = Vec::new();
    for (i, spec) in missions.iter().enumerate() {
        let fc = filter_config_for(spec)?;
        for r in 0..runs {
            let s = run_seed(seed, i * 1000 + r);
            let sc = generate_scenario(spec, s)?;
            let init = FilterInit {
                state: apply_error(
                    &sc.truth[0],
                    &cfg.init.sample(&standard_normal12(s ^ 0x5A5A_5A5A)),
                ),
                p0: cfg.init.p0(),
            };
            let score = match run_akit(
                model,
                &cfg.adaptive,
                &sc.streams,
                &fc,
                &init,
                &RunOptions::plain(),
            ) {
                Ok(out) => {
                    let vt: Vec<_> = sc.truth.iter().map(|x| x.vel).collect();
                    let ve: Vec<_> = out.states.iter().map(|x| x.vel).collect();
                    vrmse(&vt, &ve).unwrap_or(f64::INFINITY)
                }
                Err(e) if e.is_numeric() => f64::INFINITY,
                Err(e) => return Err(e),
            };
            scores.push(if score.is_finite() {
                score
            } else {
                f64::INFINITY
            });
        }
    }
    median(&scores).ok_or_else(|| Error::InvalidParameter("no validation runs".into()))
}

/// Collect traces, train and keep the checkpoint with the lowest validation
/// error (the untrained network included).
pub fn fit(
    missions: &[ScenarioSpec],
    cfg: &FitConfig,
    seed: u64,
) -> Result<(AkitModel, FitReport)> {
    if missions.is_empty() {
        return Err(Error::InvalidParameter("no training missions".into()));
    }
    let traces = build_traces(missions, cfg, seed)?;
    if traces.is_empty() {
        return Err(Error::InvalidParameter(
            "missions too short to produce adapted traces".into(),
        ));
    }
    let baseline = traces.iter().map(baseline_loss).sum::<Result<f64>>()? / traces.len() as f64;
    let mut net = SetTransformer::new(cfg.network, cfg.training.seed)?;
    let val_seed = seed ^ 0xC0FF_EE00;
    let validate = |m: &AkitModel| -> Result<Option<f64>> {
        if cfg.validation_runs == 0 {
            Ok(None)
        } else {
            validation_vrmse(m, missions, cfg, cfg.validation_runs, val_seed).map(Some)
        }
    };
    // standardization is part of the untrained candidate too
    net.standardizer = crate::transformer::Standardizer::fit(
        traces.iter().map(|t| &t.input),
        cfg.network.in_channels,
    );
    let initial = validate(&net)?;
    let mut best = (initial.unwrap_or(f64::INFINITY), None, net.clone());
    let mut history = Vec::new();
    train_with(&mut net, &traces, &cfg.training, |stats, current| {
        let v = validate(current)?;
        history.push(EpochRecord {
            epoch: stats.epoch,
            train_loss: stats.mean_loss,
            validation_vrmse: v,
        });
        if v.is_none() || v.is_some_and(|v| v < best.0) {
            best = (
                v.unwrap_or(f64::INFINITY),
                Some(stats.epoch),
                current.clone(),
            );
        }
        Ok(())
    })?;
    let (_, best_epoch, model) = best;
    Ok((
        model,
        FitReport {
            traces: traces.len(),
            baseline_loss: baseline,
            initial_validation_vrmse: initial,
            history,
            best_epoch,
        },
    ))
}

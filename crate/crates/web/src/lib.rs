//! WebAssembly bindings for the browser demo. Every entry point returns a
//! JSON document or throws a string error.

use akit::adaptive::AdaptiveConfig;
use akit::eskf::{apply_error, FilterInit, RunOptions};
use akit::harness::mc::{filter_config_for, run_method, standard_normal12, McConfig, Method};
use akit::harness::metrics::{vrmse, LocalTangent};
use akit::harness::scenario::{generate_scenario, ScenarioSpec};
use akit::nav::EulerAngles;
use akit::sensors::{beam_matrix, estimate_dvl_velocity, BeamMeasurement, DvlConfig};
use nalgebra::{Vector3, Vector4};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Samples per second kept in the returned time series.
const PLOT_RATE: usize = 2;

#[derive(Debug, Serialize)]
pub struct Track {
    pub method: &'static str,
    pub vrmse: f64,
    /// Velocity error norm, m/s.
    pub velocity_error: Vec<f64>,
    /// North and east position, m.
    pub north: Vec<f64>,
    pub east: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub t: Vec<f64>,
    pub truth_north: Vec<f64>,
    pub truth_east: Vec<f64>,
    pub tracks: Vec<Track>,
}

#[derive(Debug, Serialize)]
pub struct BeamReport {
    pub beams: [f64; 4],
    pub estimate: [f64; 3],
    pub error: [f64; 3],
    /// Beam-to-velocity matrix rows.
    pub geometry: Vec<[f64; 3]>,
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Simulate a mission and run the fixed-noise and innovation-adaptive filters
/// on it. `noise_gain` multiplies the IMU noise from mid-mission on.
pub fn compare_filters(
    kind: &str,
    duration: f64,
    noise_gain: f64,
    gamma: f64,
    seed: u64,
) -> akit::Result<Comparison> {
    let mut spec = match kind {
        "straight" => ScenarioSpec::straight(kind, duration),
        "lawnmower" => ScenarioSpec::lawnmower(kind, duration, 40.0, 4.0),
        "random" => ScenarioSpec::random(kind, duration, seed),
        other => {
            return Err(akit::Error::InvalidParameter(format!(
                "unknown scenario `{other}`"
            )))
        }
    };
    if noise_gain != 1.0 {
        spec = spec.with_noise_step(duration / 2.0, noise_gain);
    }
    let sc = generate_scenario(&spec, seed)?;
    let cfg = filter_config_for(&spec)?;
    let mc = McConfig::default();
    let adaptive = AdaptiveConfig {
        gamma,
        ..AdaptiveConfig::default()
    };
    let z = standard_normal12(seed);
    let tangent = LocalTangent::new(sc.truth[0].pos, &cfg.earth);
    let step = ((1.0 / spec.dt()) as usize / PLOT_RATE).max(1);
    let picks: Vec<usize> = (0..sc.truth.len()).step_by(step).collect();
    let ned = |p: &akit::nav::GeodeticPosition| tangent.to_ned(p);

    let mut tracks = Vec::new();
    for method in [Method::Ekf, Method::Aekf1] {
        let family = mc.family(method);
        let init = FilterInit {
            state: apply_error(&sc.truth[0], &family.sample(&z)),
            p0: family.p0(),
        };
        let out = run_method(
            method,
            &sc.streams,
            &cfg,
            &init,
            &adaptive,
            None,
            &RunOptions::plain(),
        )?;
        let v_true = sc.truth_velocity();
        let v_est: Vec<Vector3<f64>> = out.states.iter().map(|s| s.vel).collect();
        let pos: Vec<Vector3<f64>> = picks.iter().map(|&i| ned(&out.states[i].pos)).collect();
        tracks.push(Track {
            method: method.name(),
            vrmse: vrmse(&v_true, &v_est)?,
            velocity_error: picks
                .iter()
                .map(|&i| (v_est[i] - v_true[i]).norm())
                .collect(),
            north: pos.iter().map(|p| p.x).collect(),
            east: pos.iter().map(|p| p.y).collect(),
        });
    }
    let truth: Vec<Vector3<f64>> = picks.iter().map(|&i| ned(&sc.truth[i].pos)).collect();
    Ok(Comparison {
        t: picks.iter().map(|&i| i as f64 * spec.dt()).collect(),
        truth_north: truth.iter().map(|p| p.x).collect(),
        truth_east: truth.iter().map(|p| p.y).collect(),
        tracks,
    })
}

/// Beam readings for a body velocity, with an extra error on one beam, and
/// the least-squares velocity recovered from them.
pub fn explore_beams(
    velocity: [f64; 3],
    beam_pitch_deg: f64,
    mounting_yaw_deg: f64,
    faulty_beam: usize,
    beam_error: f64,
) -> akit::Result<BeamReport> {
    if faulty_beam > 3 {
        return Err(akit::Error::InvalidParameter(
            "beam index must be 0..=3".into(),
        ));
    }
    let cfg = DvlConfig::with_mounting(
        beam_pitch_deg.to_radians(),
        EulerAngles::from_degrees(0.0, 0.0, mounting_yaw_deg),
    );
    let h = beam_matrix(&cfg);
    let v = Vector3::from(velocity);
    let mut y = h * (cfg.c_d_b.transpose() * v);
    y[faulty_beam] += beam_error;
    let est = estimate_dvl_velocity(&BeamMeasurement { t: 0.0, y }, &cfg)?;
    let beams: Vector4<f64> = y;
    Ok(BeamReport {
        beams: beams.into(),
        estimate: est.into(),
        error: (est - v).into(),
        geometry: h.row_iter().map(|r| [r[0], r[1], r[2]]).collect(),
    })
}

#[wasm_bindgen]
pub fn compare(
    kind: &str,
    duration: f64,
    noise_gain: f64,
    gamma: f64,
    seed: u32,
) -> Result<String, JsError> {
    let c = compare_filters(kind, duration, noise_gain, gamma, seed.into()).map_err(err)?;
    serde_json::to_string(&c).map_err(err)
}

#[wasm_bindgen]
pub fn beams(
    vx: f64,
    vy: f64,
    vz: f64,
    beam_pitch_deg: f64,
    mounting_yaw_deg: f64,
    faulty_beam: usize,
    beam_error: f64,
) -> Result<String, JsError> {
    let r = explore_beams(
        [vx, vy, vz],
        beam_pitch_deg,
        mounting_yaw_deg,
        faulty_beam,
        beam_error,
    )
    .map_err(err)?;
    serde_json::to_string(&r).map_err(err)
}

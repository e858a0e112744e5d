//! Simulated AUV missions.
//!
//! A mission is a list of legs (turn rate, speed change, pitch) plus roll and
//! pitch oscillations. Truth is produced by inverse mechanization: at every
//! step the IMU reading that drives the strapdown equations onto the desired
//! profile is solved for, and the truth is then propagated with exactly the
//! same `strapdown_step` the filters use.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eskf::{DvlVelocity, SensorStreams};
use crate::nav::{vee, Dcm, EarthModel, EulerAngles, GeodeticPosition};
use crate::sensors::{
    estimate_dvl_velocity, simulate_dvl, BeamMeasurement, DvlConfig, DvlErrorModel, ImuCorruptor,
    ImuErrorModel,
};
use crate::strapdown::{strapdown_step, ImuSample, NavState};
use crate::{Error, Result};

/// One maneuver segment. Rates and pitch are reached through a smooth ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub duration: f64,
    pub yaw_rate_deg_s: f64,
    /// Longitudinal acceleration, m/s^2.
    pub accel: f64,
    pub pitch_deg: f64,
}

/// IMU white-noise standard deviations are multiplied by `gain` from `t` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStep {
    pub t: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvlSpec {
    pub beam_pitch_deg: f64,
    pub sigma_beam: f64,
    pub rate_hz: f64,
}

impl DvlSpec {
    pub fn config(&self) -> DvlConfig {
        DvlConfig {
            pitch: self.beam_pitch_deg.to_radians(),
            rate_hz: self.rate_hz,
            ..DvlConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub imu_rate_hz: f64,
    pub start_lat_deg: f64,
    pub start_lon_deg: f64,
    pub start_h: f64,
    pub initial_speed: f64,
    pub initial_yaw_deg: f64,
    pub legs: Vec<Leg>,
    pub roll_amp_deg: f64,
    pub roll_period: f64,
    pub pitch_amp_deg: f64,
    pub pitch_period: f64,
    /// Feasibility bound on translational acceleration, m/s^2.
    pub max_accel: f64,
    pub imu: ImuErrorModel,
    pub dvl: DvlSpec,
    pub noise_schedule: Vec<NoiseStep>,
}

/// Default sensor grade used by the benchmark missions.
pub fn default_imu() -> ImuErrorModel {
    ImuErrorModel {
        sigma_a: 0.005,
        sigma_g: 5e-5,
        sigma_ab: 1e-5,
        sigma_gb: 1e-7,
        b_a0: Vector3::new(0.03, -0.02, 0.04),
        b_g0: Vector3::new(2e-5, -1.5e-5, 1e-5),
    }
}

pub fn default_dvl() -> DvlSpec {
    DvlSpec {
        beam_pitch_deg: 20.0,
        sigma_beam: 0.01,
        rate_hz: 1.0,
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::straight("scenario", SEGMENT_DURATION)
    }
}

impl ScenarioSpec {
    /// Straight, level, constant-speed mission with the default sensors.
    pub fn straight(name: &str, duration: f64) -> Self {
        Self {
            name: name.into(),
            duration,
            imu_rate_hz: 100.0,
            start_lat_deg: 32.82,
            start_lon_deg: 34.95,
            start_h: -20.0,
            initial_speed: 1.5,
            initial_yaw_deg: 0.0,
            legs: vec![],
            roll_amp_deg: 0.0,
            roll_period: 10.0,
            pitch_amp_deg: 0.0,
            pitch_period: 10.0,
            max_accel: 2.0,
            imu: default_imu(),
            dvl: default_dvl(),
            noise_schedule: vec![],
        }
    }

    /// Lawnmower survey: straight tracks joined by 180 degree turns, with
    /// speed changes and gentle depth changes.
    pub fn lawnmower(name: &str, duration: f64, track_s: f64, turn_rate_deg_s: f64) -> Self {
        let mut spec = Self::straight(name, duration);
        spec.roll_amp_deg = 2.0;
        spec.roll_period = 8.0;
        spec.pitch_amp_deg = 1.0;
        spec.pitch_period = 12.0;
        let turn_s = 180.0 / turn_rate_deg_s.abs();
        let mut t = 0.0;
        let mut sign = 1.0;
        let mut i = 0;
        while t < duration {
            let accel = if i % 3 == 1 {
                0.01
            } else if i % 3 == 2 {
                -0.01
            } else {
                0.0
            };
            spec.legs.push(Leg {
                duration: track_s,
                yaw_rate_deg_s: 0.0,
                accel,
                pitch_deg: if i % 2 == 0 { 2.0 } else { -2.0 },
            });
            spec.legs.push(Leg {
                duration: turn_s,
                yaw_rate_deg_s: sign * turn_rate_deg_s.abs(),
                accel: 0.0,
                pitch_deg: 0.0,
            });
            t += track_s + turn_s;
            sign = -sign;
            i += 1;
        }
        spec
    }

    /// Randomized legs drawn from a seed.
    pub fn random(name: &str, duration: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::straight(name, duration);
        spec.initial_speed = rng.random_range(1.0..2.0);
        spec.initial_yaw_deg = rng.random_range(-180.0..180.0);
        spec.roll_amp_deg = rng.random_range(0.5..4.0);
        spec.roll_period = rng.random_range(5.0..15.0);
        spec.pitch_amp_deg = rng.random_range(0.5..2.0);
        spec.pitch_period = rng.random_range(8.0..20.0);
        let mut t = 0.0;
        let mut speed = spec.initial_speed;
        while t < duration {
            let d = rng.random_range(15.0..60.0);
            let mut accel = rng.random_range(-0.02..0.02);
            if !(0.8..=2.4).contains(&(speed + accel * d)) {
                accel = -accel;
            }
            speed += accel * d;
            spec.legs.push(Leg {
                duration: d,
                yaw_rate_deg_s: if rng.random_bool(0.5) {
                    rng.random_range(-3.0..3.0)
                } else {
                    0.0
                },
                accel,
                pitch_deg: rng.random_range(-5.0..5.0),
            });
            t += d;
        }
        spec
    }

    pub fn with_noise_step(mut self, t: f64, gain: f64) -> Self {
        self.noise_schedule.push(NoiseStep { t, gain });
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate_hz
    }

    pub fn imu_len(&self) -> usize {
        (self.duration * self.imu_rate_hz).round() as usize + 1
    }

    /// IMU white-noise multiplier in force at time `t`.
    pub fn noise_gain(&self, t: f64) -> f64 {
        self.noise_schedule
            .iter()
            .filter(|s| s.t <= t)
            .fold(1.0, |_, s| s.gain)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.imu_rate_hz > 0.0) || !(self.dvl.rate_hz > 0.0) {
            return Err(Error::InvalidParameter(
                "duration and rates must be positive".into(),
            ));
        }
        if self.dvl.rate_hz > self.imu_rate_hz {
            return Err(Error::InvalidParameter("DVL rate exceeds IMU rate".into()));
        }
        if self.legs.iter().any(|l| !(l.duration > 0.0)) {
            return Err(Error::InvalidParameter(
                "leg durations must be positive".into(),
            ));
        }
        if self.noise_schedule.iter().any(|s| !(s.gain >= 0.0)) {
            return Err(Error::InvalidParameter(
                "noise gains must be non-negative".into(),
            ));
        }
        if self.noise_schedule.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidParameter(
                "noise schedule must be sorted by time".into(),
            ));
        }
        self.imu.validate()
    }
}

/// Ramp from 0 to 1 over `width` seconds with zero slope at both ends.
fn smoothstep(x: f64, width: f64) -> f64 {
    let u = (x / width).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Desired speed, Euler angles at each IMU epoch.
fn kinematic_profile(spec: &ScenarioSpec) -> Vec<(f64, EulerAngles)> {
    let n = spec.imu_len();
    let dt = spec.dt();
    let ramp = 3.0;
    let mut out = Vec::with_capacity(n);
    let mut speed = spec.initial_speed;
    let mut yaw = spec.initial_yaw_deg.to_radians();
    let mut leg_idx = 0;
    let mut leg_start = 0.0;
    let mut prev = Leg {
        duration: 0.0,
        yaw_rate_deg_s: 0.0,
        accel: 0.0,
        pitch_deg: 0.0,
    };
    for k in 0..n {
        let t = k as f64 * dt;
        while leg_idx < spec.legs.len() && t >= leg_start + spec.legs[leg_idx].duration {
            prev = spec.legs[leg_idx];
            leg_start += spec.legs[leg_idx].duration;
            leg_idx += 1;
        }
        let cur = spec.legs.get(leg_idx).copied().unwrap_or(Leg {
            duration: f64::INFINITY,
            yaw_rate_deg_s: 0.0,
            accel: 0.0,
            pitch_deg: prev.pitch_deg,
        });
        let w = smoothstep(t - leg_start, ramp);
        let yaw_rate =
            (prev.yaw_rate_deg_s + w * (cur.yaw_rate_deg_s - prev.yaw_rate_deg_s)).to_radians();
        let accel = prev.accel + w * (cur.accel - prev.accel);
        let pitch_leg = prev.pitch_deg + w * (cur.pitch_deg - prev.pitch_deg);
        let tau = std::f64::consts::TAU;
        let roll = spec.roll_amp_deg.to_radians() * (tau * t / spec.roll_period).sin();
        let pitch = pitch_leg.to_radians()
            + spec.pitch_amp_deg.to_radians() * (tau * t / spec.pitch_period).sin();
        out.push((speed, EulerAngles::new(roll, pitch, yaw)));
        speed += accel * dt;
        yaw += yaw_rate * dt;
    }
    out
}

/// IMU reading that takes `state` onto the desired velocity and attitude in one step.
pub fn inverse_mechanization(
    state: &NavState,
    v_next: &Vector3<f64>,
    c_next: &Dcm,
    dt: f64,
    earth: &EarthModel,
) -> ImuSample {
    let c = state.att.matrix();
    let (w_ie, w_en) = earth.rates(&state.pos, &state.vel);
    let f_n =
        (v_next - state.vel) / dt + (2.0 * w_ie + w_en).cross(&state.vel) - earth.gravity_ned();
    let omega_in = crate::nav::skew(&(w_ie + w_en));
    let omega_ib = c.transpose() * ((c_next.matrix() - c) / dt + omega_in * c);
    ImuSample::new(
        0.0,
        c.transpose() * f_n,
        vee(&((omega_ib - omega_ib.transpose()) * 0.5)),
    )
}

/// Noise-free part of a scenario: truth states and the ideal IMU stream.
#[derive(Debug, Clone)]
pub struct Truth {
    /// One state per IMU epoch; biases are zero here.
    pub states: Vec<NavState>,
    /// Ideal IMU sample `k` drives `states[k]` to `states[k + 1]`.
    pub imu: Vec<ImuSample>,
}

pub fn simulate_truth(spec: &ScenarioSpec) -> Result<Truth> {
    spec.validate()?;
    let earth = EarthModel::default();
    let dt = spec.dt();
    let profile = kinematic_profile(spec);
    let desired = |k: usize| {
        let (u, e) = profile[k];
        let c = Dcm::from_euler(e);
        // the vehicle moves along its nose
        (c.matrix() * Vector3::new(u, 0.0, 0.0), c)
    };
    let (v0, c0) = desired(0);
    let mut state = NavState::new(
        GeodeticPosition::from_degrees(spec.start_lat_deg, spec.start_lon_deg, spec.start_h),
        v0,
        c0,
    );
    let n = profile.len();
    let mut states = Vec::with_capacity(n);
    let mut imu = Vec::with_capacity(n);
    for k in 0..n {
        states.push(state);
        let t = k as f64 * dt;
        let (v_next, c_next) = if k + 1 < n {
            desired(k + 1)
        } else {
            (state.vel, state.att)
        };
        let mut sample = inverse_mechanization(&state, &v_next, &c_next, dt, &earth);
        sample.t = t;
        let accel = (v_next - state.vel).norm() / dt;
        if accel > spec.max_accel {
            return Err(Error::InfeasibleManeuver(format!(
                "{}: acceleration {accel:.3} m/s^2 at t = {t:.2} s exceeds {}",
                spec.name, spec.max_accel
            )));
        }
        imu.push(sample);
        if k + 1 < n {
            state = strapdown_step(&state, &sample, dt, &earth)?;
        }
    }
    Ok(Truth { states, imu })
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    /// Truth per IMU epoch with the true sensor biases in `b_a`/`b_g`.
    pub truth: Vec<NavState>,
    pub imu: Vec<ImuSample>,
    pub dvl_beams: Vec<BeamMeasurement>,
    pub streams: SensorStreams,
}

impl Scenario {
    pub fn truth_velocity(&self) -> Vec<Vector3<f64>> {
        self.truth.iter().map(|s| s.vel).collect()
    }
}

/// Corrupt a truth realization with sensor noise drawn from `seed`.
pub fn corrupt(spec: &ScenarioSpec, truth: &Truth, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = spec.dt();
    let mut corruptor = ImuCorruptor::new(spec.imu)?;
    let mut states = truth.states.clone();
    let mut imu = Vec::with_capacity(truth.imu.len());
    for (k, ideal) in truth.imu.iter().enumerate() {
        states[k].b_a = corruptor.accel_bias();
        states[k].b_g = corruptor.gyro_bias();
        imu.push(corruptor.corrupt(ideal, dt, spec.noise_gain(ideal.t), &mut rng));
    }

    let dvl_cfg = spec.dvl.config();
    let dvl_err = DvlErrorModel::noise_only(spec.dvl.sigma_beam);
    let stride = (spec.imu_rate_hz / spec.dvl.rate_hz).round() as usize;
    let mut dvl_beams = Vec::new();
    let mut dvl = Vec::new();
    for k in (stride..states.len()).step_by(stride) {
        let s = &states[k];
        let t = k as f64 * dt;
        let beams = simulate_dvl(
            t,
            &(s.att.transpose() * s.vel),
            &dvl_cfg,
            &dvl_err,
            &mut rng,
        );
        dvl.push(DvlVelocity {
            t,
            v: estimate_dvl_velocity(&beams, &dvl_cfg)?,
        });
        dvl_beams.push(beams);
    }
    Ok(Scenario {
        spec: spec.clone(),
        truth: states,
        streams: SensorStreams {
            imu: imu.clone(),
            dvl,
        },
        imu,
        dvl_beams,
    })
}

pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let truth = simulate_truth(spec)?;
    corrupt(spec, &truth, seed)
}

/// Training and held-out missions of the benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub train: Vec<ScenarioSpec>,
    pub test: Vec<ScenarioSpec>,
}

pub const SEGMENT_DURATION: f64 = 400.0;
pub const TEST_STEP_TIME: f64 = 200.0;
pub const TEST_STEP_GAIN: f64 = 10.0;

/// Eleven training segments with varied noise schedules and two held-out
/// segments with the noise stepping up tenfold halfway through.
pub fn benchmark_suite(seed: u64) -> BenchmarkSuite {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(11);
    for i in 0..11 {
        let name = format!("train-{i:02}");
        let mut spec = if i % 3 == 0 {
            ScenarioSpec::lawnmower(
                &name,
                SEGMENT_DURATION,
                rng.random_range(40.0..90.0),
                rng.random_range(3.0..6.0),
            )
        } else {
            ScenarioSpec::random(&name, SEGMENT_DURATION, rng.random())
        };
        // a mix of constant, stepped-up and stepped-down noise levels
        let base: f64 = [1.0, 1.0, 2.0, 5.0][i % 4];
        spec.noise_schedule.push(NoiseStep { t: 0.0, gain: base });
        if i % 2 == 0 {
            let gain = [10.0, 20.0, 5.0, 15.0, 1.0, 8.0][i / 2 % 6];
            spec.noise_schedule.push(NoiseStep {
                t: rng.random_range(100.0..300.0),
                gain,
            });
        }
        train.push(spec);
    }
    let test = (0..2)
        .map(|i| {
            let name = format!("test-{i:02}");
            let spec = if i == 0 {
                ScenarioSpec::lawnmower(&name, SEGMENT_DURATION, 70.0, 4.0)
            } else {
                ScenarioSpec::random(&name, SEGMENT_DURATION, rng.random())
            };
            spec.with_noise_step(TEST_STEP_TIME, TEST_STEP_GAIN)
        })
        .collect();
    BenchmarkSuite { train, test }
}

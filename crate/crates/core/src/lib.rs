//! Error-state EKF for INS/DVL navigation with adaptive process noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`nav`]: frames, rotations, and the Earth model
//! - [`strapdown`]: dead-reckoning mechanization
//! - [`sensors`]: IMU/DVL error models and the Janus beam geometry
//! - [`eskf`]: the 12-state error-state filter and the multi-rate runner
//! - [`adaptive`]: innovation-based process noise estimators
//! - [`transformer`]: the set-transformer that regresses process-noise scales
//! - [`akit`]: Kalman-informed loss, training, and the learned-noise filter
//! - [`harness`]: scenario simulation, dataset I/O, metrics, Monte-Carlo study

// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod akit;
pub mod error;
pub mod eskf;
pub mod harness;
pub mod linalg;
pub mod nav;
pub mod sensors;
pub mod strapdown;
pub mod transformer;

pub use error::{Error, Result};

//! Simulation, dataset I/O, metrics, and the Monte-Carlo study.

pub mod io;
pub mod mc;
pub mod metrics;
pub mod scenario;
pub mod training;

//! Orchestration layer: configuration, single runs and (N, theta) sweeps,
//! weak-* convergence metrics, constant calibration, and report emission.

pub mod calibrate;
pub mod config;
pub mod report;
pub mod scenario;
pub mod weakstar;

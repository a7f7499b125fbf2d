//! Experiment harness on top of `nlsv-core`: configuration files, scenario
//! runs, epsilon sweeps with scaling fits, Strichartz diagnostics, comparison
//! with the effective mechanics, and bit-stable exports.

pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod scenario;
pub mod strichartz;
pub mod sweep;

pub use error::{LabError, Result};

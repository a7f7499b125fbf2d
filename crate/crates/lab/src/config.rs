//! TOML configuration files with sections `[model]`, `[potential]`, `[grid]`,
//! `[run]`, `[output]`.

use std::path::Path;

use nlsv_core::model::{
    validate_config, GridSection, Nonlinearity, Potential, RunSection, SimulationConfig,
    ValidatedConfig,
};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ValidatedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    Ok(validate_config(&parse_config(&text)?)?)
}

pub fn to_toml(cfg: &SimulationConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| LabError::Config(e.to_string()))
}

/// SHA-256 of the canonical JSON form, as lowercase hex.
pub fn config_hash(cfg: &SimulationConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config is always serializable");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cubic soliton in a Gaussian well `-exp(-x^2/8)`, released at rest from
/// `x = 3`, run to `T = 5 / eps`.
pub fn well_scenario(epsilon: f64) -> SimulationConfig {
    SimulationConfig {
        model: Nonlinearity::cubic(),
        potential: Potential::gaussian(-1.0, [0.0; 3], 2.0),
        grid: GridSection {
            dim: 1,
            box_length: 40.0 * std::f64::consts::PI,
            grid_points: 1024,
        },
        run: RunSection {
            reference_energy: Some(1.0),
            reference_mass: None,
            epsilon,
            dt: 1e-3,
            t_final: 5.0 / epsilon,
            extraction_cadence: ((5.0 / epsilon / 1e-3) / 2000.0).round().max(1.0) as usize,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            p0: [0.0; 4],
            q0: [3.0, 0.0, 0.0, 0.0],
            perturbation: None,
            stability_threshold: 1.0,
        },
        output: Default::default(),
    }
}

//! Discrete Strichartz norms `(sum_n dt |phi(t_n)|^r_{W^{1,s}})^{1/r}` of a
//! remainder series.

use nlsv_core::field::{norm, Space};
use nlsv_core::FieldState;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrichartzEntry {
    pub r: f64,
    pub s: f64,
    pub norm: f64,
    /// `2/r + d/s = d/2` with `r >= 2` (and `s <= 6` in 3D).
    pub admissible: bool,
    /// Set for every 1D pair: the admissibility theory used here is the 3D one.
    pub outside_3d: bool,
}

pub fn is_admissible(dim: usize, r: f64, s: f64) -> bool {
    let d = dim as f64;
    let balance = 2.0 / r + d / s - d / 2.0;
    let s_max = if dim >= 3 {
        2.0 * d / (d - 2.0)
    } else {
        f64::INFINITY
    };
    r >= 2.0 && s >= 2.0 && s <= s_max && balance.abs() < 1e-12
}

/// Norms of `snapshots` (uniform spacing `dt`) for each `(r, s)`. In 3D a
/// non-admissible pair is an error; in 1D pairs are accepted and flagged.
pub fn strichartz_diagnostic(
    snapshots: &[FieldState],
    dt: f64,
    pairs: &[(f64, f64)],
) -> Result<Vec<StrichartzEntry>> {
    let first = snapshots
        .first()
        .ok_or_else(|| LabError::Format("no snapshots".into()))?;
    let dim = first.grid().dim();
    let mut out = Vec::with_capacity(pairs.len());
    for &(r, s) in pairs {
        let admissible = is_admissible(dim, r, s);
        if dim == 3 && !admissible {
            return Err(LabError::Config(format!(
                "(r, s) = ({r}, {s}) is not admissible in 3D"
            )));
        }
        let w: Vec<f64> = snapshots
            .iter()
            .map(|phi| norm(phi, Space::W1 { s }))
            .collect::<nlsv_core::Result<_>>()?;
        let value = if r.is_infinite() {
            w.iter().fold(0.0f64, |a, v| a.max(*v))
        } else {
            (w.iter().map(|v| dt * v.powf(r)).sum::<f64>()).powf(1.0 / r)
        };
        out.push(StrichartzEntry {
            r,
            s,
            norm: value,
            admissible,
            outside_3d: dim != 3,
        });
    }
    Ok(out)
}

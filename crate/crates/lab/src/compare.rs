//! Side-by-side comparison of an extracted run with a mechanical orbit.

use nlsv_core::mech::{
    critical_value_check, orbit_distance, CriticalValueCheck, EffectivePotential, MechOrbit,
    MechState,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::export::Table;
use crate::scenario::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: f64,
    pub q_pde: [f64; 3],
    pub q_mech: [f64; 3],
    pub d_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub max_d_eps: f64,
    pub mean_d_eps: f64,
    /// Largest `|q_pde - q_mech|` over rows inside the orbit's time span.
    pub max_q_difference: f64,
    pub critical: Option<CriticalValueCheck>,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "t", "q1_pde", "q2_pde", "q3_pde", "q1_mech", "q2_mech", "q3_mech", "d_eps",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.t,
                r.q_pde[0],
                r.q_pde[1],
                r.q_pde[2],
                r.q_mech[0],
                r.q_mech[1],
                r.q_mech[2],
                r.d_eps,
            ]);
        }
        t
    }
}

/// Orbit position at time `t` by linear interpolation; closed orbits are
/// continued periodically. `None` outside the sampled span.
fn orbit_position(orbit: &MechOrbit, t: f64) -> Option<[f64; 3]> {
    let s = &orbit.samples;
    let (t0, t1) = (s.first()?.t, s.last()?.t);
    let t = match orbit.period {
        Some(p) if p > 0.0 => t0 + (t - t0).rem_euclid(p),
        _ => t,
    };
    if t < t0 || t > t1 {
        return None;
    }
    let i = s.partition_point(|x| x.t <= t).clamp(1, s.len().max(2) - 1);
    if s.len() == 1 {
        return Some(s[0].q);
    }
    let (a, b) = (&s[i - 1], &s[i]);
    let w = if b.t > a.t {
        (t - a.t) / (b.t - a.t)
    } else {
        0.0
    };
    Some([0, 1, 2].map(|k| a.q[k] + w * (b.q[k] - a.q[k])))
}

/// `d_eps` of every row against `orbit`, the critical-value check at the run's
/// initial level, and the `(t, q_pde, q_mech)` table.
pub fn compare(
    record: &RunRecord,
    orbit: &MechOrbit,
    veff: &EffectivePotential,
    margin: f64,
) -> Result<CompareReport> {
    if orbit.dim != record.dim || veff.dim() != record.dim {
        return Err(nlsv_core::Error::Dimension(format!(
            "run is {}D, orbit {}D",
            record.dim, orbit.dim
        ))
        .into());
    }
    let mut rows = Vec::with_capacity(record.rows.len());
    let mut max_q: f64 = 0.0;
    for r in &record.rows {
        let state = MechState {
            p: [r.p[0], r.p[1], r.p[2]],
            q: [r.q[0], r.q[1], r.q[2]],
            t: r.t,
        };
        let d = orbit_distance(&state, orbit, veff)?;
        let q_mech = orbit_position(orbit, r.t).unwrap_or([f64::NAN; 3]);
        if q_mech[0].is_finite() {
            max_q = max_q.max(
                (0..3)
                    .map(|k| (state.q[k] - q_mech[k]).abs())
                    .fold(0.0, f64::max),
            );
        }
        rows.push(CompareRow {
            t: r.t,
            q_pde: state.q,
            q_mech,
            d_eps: d,
        });
    }
    let n = rows.len().max(1) as f64;
    let critical = if record.epsilon > 0.0 {
        Some(critical_value_check(
            record.summary.h_mech_initial,
            record.epsilon,
            veff,
            margin,
        )?)
    } else {
        None
    };
    Ok(CompareReport {
        max_d_eps: rows.iter().map(|r| r.d_eps).fold(0.0, f64::max),
        mean_d_eps: rows.iter().map(|r| r.d_eps).sum::<f64>() / n,
        max_q_difference: max_q,
        critical,
        rows,
    })
}

/// A run's own extracted trajectory, read as a mechanical orbit.
pub fn trajectory_as_orbit(record: &RunRecord, mass: f64) -> MechOrbit {
    MechOrbit {
        samples: record.rows.iter().map(|r| r.mech_state()).collect(),
        energy: record.summary.h_mech_initial,
        mass,
        eps: record.epsilon,
        dim: record.dim,
        period: None,
    }
}

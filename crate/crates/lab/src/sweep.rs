//! Epsilon sweeps: the same scenario at several `eps` with horizon `T0 / eps`,
//! and log-log least-squares slopes of the per-run maxima.

use nlsv_core::model::{validate_config, SimulationConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{LabError, Result};
use crate::export::Table;
use crate::scenario::{scenario_run_with, RunRecord, ScenarioOptions};
use crate::strichartz::{strichartz_diagnostic, StrichartzEntry};

pub const MIN_FIT_POINTS: usize = 3;

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `ln y`.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(LabError::TooFewRuns {
            need: MIN_FIT_POINTS,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::Format("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(LogLogFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// Horizon in slow time: each run ends at `t0 / eps`.
    pub t0: f64,
    /// Target number of extraction samples per run.
    pub samples: usize,
    pub scenario: ScenarioOptions,
    /// Strichartz pairs evaluated on every run's remainder series.
    pub strichartz_pairs: Vec<(f64, f64)>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            t0: 5.0,
            samples: 2000,
            scenario: ScenarioOptions::default(),
            strichartz_pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub config_hash: String,
    pub max_drift: f64,
    pub max_phi_h1: f64,
    pub max_d_eps: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub critical_passed: Option<bool>,
    pub mass_drift_rel: f64,
    pub h_total_drift: f64,
    pub strichartz: Vec<StrichartzEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub epsilon: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub drift_fit: LogLogFit,
    pub phi_fit: LogLogFit,
    pub d_eps_fit: Option<LogLogFit>,
    /// One fit per Strichartz pair, in the order given.
    pub strichartz_fits: Vec<LogLogFit>,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "epsilon",
            "max_drift",
            "max_phi_h1",
            "max_d_eps",
            "mass_drift_rel",
            "h_total_drift",
        ]);
        for p in &self.points {
            t.push(vec![
                p.epsilon,
                p.max_drift,
                p.max_phi_h1,
                p.max_d_eps,
                p.mass_drift_rel,
                p.h_total_drift,
            ]);
        }
        t
    }
}

/// `base` with `eps` substituted, horizon `t0 / eps` and cadence chosen for
/// about `samples` extractions.
pub fn sweep_config(
    base: &SimulationConfig,
    eps: f64,
    settings: &SweepSettings,
) -> SimulationConfig {
    let mut c = base.clone();
    c.run.epsilon = eps;
    c.run.t_final = settings.t0 / eps;
    let steps = (c.run.t_final / c.run.dt).round();
    c.run.extraction_cadence = (steps / settings.samples as f64).round().max(1.0) as usize;
    c
}

fn run_one(
    base: &SimulationConfig,
    eps: f64,
    settings: &SweepSettings,
) -> Result<(RunRecord, Vec<StrichartzEntry>)> {
    let cfg = validate_config(&sweep_config(base, eps, settings))?;
    let mut opts = settings.scenario;
    if !settings.strichartz_pairs.is_empty() {
        opts.phi_stride = 1;
    }
    let mut rec = scenario_run_with(&cfg, &opts)?;
    let st = if settings.strichartz_pairs.is_empty() {
        Vec::new()
    } else {
        let snaps: Vec<_> = rec.phi_snapshots.drain(..).map(|(_, f)| f).collect();
        strichartz_diagnostic(&snaps, rec.sample_interval, &settings.strichartz_pairs)?
    };
    rec.phi_snapshots.clear();
    Ok((rec, st))
}

/// Runs every `eps` concurrently (one task each), then fits the scaling laws
/// over the runs that completed. Partial runs count as failures.
pub fn epsilon_sweep(
    base: &SimulationConfig,
    eps_list: &[f64],
    settings: &SweepSettings,
) -> Result<(SweepResult, Vec<RunRecord>)> {
    if eps_list.len() < MIN_FIT_POINTS {
        return Err(LabError::TooFewRuns {
            need: MIN_FIT_POINTS,
            got: eps_list.len(),
        });
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0)) {
        return Err(LabError::Config(format!(
            "sweep epsilon {e} must be positive"
        )));
    }
    let outcomes: Vec<(f64, Result<(RunRecord, Vec<StrichartzEntry>)>)> = eps_list
        .par_iter()
        .map(|&eps| (eps, run_one(base, eps, settings)))
        .collect();

    let mut points = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (eps, out) in outcomes {
        match out {
            Ok((rec, st)) if !rec.summary.partial => {
                let s = &rec.summary;
                points.push(SweepPoint {
                    epsilon: eps,
                    config_hash: config_hash(&sweep_config(base, eps, settings)),
                    max_drift: s.max_drift,
                    max_phi_h1: s.max_phi_h1,
                    max_d_eps: s.max_d_eps,
                    c1: s.c1,
                    c2: s.c2,
                    critical_passed: s.critical.as_ref().map(|c| c.passed),
                    mass_drift_rel: s.mass_drift_rel,
                    h_total_drift: s.h_total_drift,
                    strichartz: st,
                });
                records.push(rec);
            }
            Ok((rec, _)) => failures.push(SweepFailure {
                epsilon: eps,
                message: rec
                    .summary
                    .failure
                    .map(|f| format!("partial run: {} at t = {}", f.message, f.time))
                    .unwrap_or_default(),
            }),
            Err(e) => failures.push(SweepFailure {
                epsilon: eps,
                message: e.to_string(),
            }),
        }
    }
    if points.len() < MIN_FIT_POINTS {
        return Err(LabError::TooFewRuns {
            need: MIN_FIT_POINTS,
            got: points.len(),
        });
    }
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let col = |f: &dyn Fn(&SweepPoint) -> f64| points.iter().map(f).collect::<Vec<_>>();
    let drift_fit = fit_loglog(&eps, &col(&|p| p.max_drift))?;
    let phi_fit = fit_loglog(&eps, &col(&|p| p.max_phi_h1))?;
    let d_eps_fit = fit_loglog(&eps, &col(&|p| p.max_d_eps)).ok();
    let strichartz_fits = (0..settings.strichartz_pairs.len())
        .map(|k| fit_loglog(&eps, &col(&|p| p.strichartz[k].norm)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SweepResult {
            points,
            drift_fit,
            phi_fit,
            d_eps_fit,
            strichartz_fits,
            failures,
        },
        records,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::well_scenario;

    #[test]
    fn exact_power_law() {
        let x = [1e-2, 4e-3, 1e-3];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(1.5)).collect();
        let f = fit_loglog(&x, &y).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn residual_measures_scatter() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y = [1.0, 2.0 * 1.1, 4.0 / 1.1, 8.0];
        let f = fit_loglog(&x, &y).unwrap();
        assert!(f.residual > 0.01 && f.residual < 0.1);
    }

    #[test]
    fn two_points_are_not_enough() {
        assert!(matches!(
            fit_loglog(&[1e-2, 1e-3], &[1.0, 2.0]),
            Err(LabError::TooFewRuns { need: 3, got: 2 })
        ));
        let base = well_scenario(1e-2);
        let r = epsilon_sweep(&base, &[1e-2, 1e-3], &SweepSettings::default());
        assert!(matches!(r, Err(LabError::TooFewRuns { .. })));
    }

    #[test]
    fn sweep_config_horizon() {
        let base = well_scenario(1e-2);
        let s = SweepSettings::default();
        let c = sweep_config(&base, 4e-3, &s);
        assert_eq!(c.run.t_final, 1250.0);
        assert_eq!(c.run.extraction_cadence, 625);
        assert_eq!(c.run.epsilon, 4e-3);
    }
}

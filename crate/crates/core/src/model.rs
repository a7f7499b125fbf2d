//! Nonlinearity, external potential and the run configuration shared by every
//! other module.
//!
//! The evolution equation is driven by a nonlinearity `beta` with `beta'(0) = 0`
//! and a small potential `eps * V` where `V` is a finite sum of Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearityKind {
    /// `beta'(s) = c s^sigma`
    Power,
    /// `beta'(s) = c s / (1 + s)`
    Saturable,
}

/// The function `beta` of the nonlinear term `beta'(|psi|^2) psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    #[serde(default = "one")]
    pub sigma: f64,
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl Nonlinearity {
    pub fn power(sigma: f64, c: f64) -> Self {
        Self {
            kind: NonlinearityKind::Power,
            sigma,
            c,
        }
    }

    pub fn saturable(c: f64) -> Self {
        Self {
            kind: NonlinearityKind::Saturable,
            sigma: 1.0,
            c,
        }
    }

    /// The focusing cubic nonlinearity `beta'(s) = 2 s`.
    pub fn cubic() -> Self {
        Self::power(1.0, 2.0)
    }

    /// Growth index `p` in `|beta^(k)(s)| <= C_k (1 + s)^(1 + p - k)`.
    pub fn growth_index(&self) -> f64 {
        match self.kind {
            NonlinearityKind::Power => self.sigma,
            NonlinearityKind::Saturable => 0.0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<ConfigIssue>> {
        let mut issues = Vec::new();
        if !(self.c > 0.0 && self.c.is_finite()) {
            issues.push(issue("model.c", "coupling must be positive"));
        }
        if self.kind == NonlinearityKind::Power {
            if !(self.sigma > 0.0) {
                issues.push(issue("model.sigma", "exponent must be positive"));
            }
            if !(self.sigma < 2.0) {
                issues.push(issue("model.sigma", "growth index must satisfy sigma < 2"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// `(beta(s), beta'(s), beta''(s))` for `s >= 0`.
    ///
    /// For the power family with `sigma < 1` the second derivative is infinite
    /// at `s = 0`; callers that need `beta''(s) s` should use
    /// [`Nonlinearity::beta_pp_times_s`].
    pub fn beta_eval(&self, s: f64) -> Result<(f64, f64, f64)> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("beta evaluated at s = {s} < 0")));
        }
        Ok((self.beta(s), self.beta_prime(s), self.beta_second(s)))
    }

    #[inline]
    pub fn beta(&self, s: f64) -> f64 {
        match self.kind {
            NonlinearityKind::Power => self.c * s.powf(self.sigma + 1.0) / (self.sigma + 1.0),
            NonlinearityKind::Saturable => self.c * (s - s.ln_1p()),
        }
    }

    #[inline]
    pub fn beta_prime(&self, s: f64) -> f64 {
        match self.kind {
            NonlinearityKind::Power => {
                if s == 0.0 {
                    0.0
                } else if self.sigma == 1.0 {
                    self.c * s
                } else {
                    self.c * s.powf(self.sigma)
                }
            }
            NonlinearityKind::Saturable => self.c * s / (1.0 + s),
        }
    }

    #[inline]
    pub fn beta_second(&self, s: f64) -> f64 {
        match self.kind {
            NonlinearityKind::Power => {
                let sig = self.sigma;
                if sig == 1.0 {
                    self.c
                } else if s == 0.0 {
                    if sig > 1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    self.c * sig * s.powf(sig - 1.0)
                }
            }
            NonlinearityKind::Saturable => self.c / ((1.0 + s) * (1.0 + s)),
        }
    }

    /// `beta''(s) * s`, finite for every `s >= 0`.
    #[inline]
    pub fn beta_pp_times_s(&self, s: f64) -> f64 {
        match self.kind {
            NonlinearityKind::Power => {
                if s == 0.0 {
                    0.0
                } else {
                    self.c * self.sigma * s.powf(self.sigma)
                }
            }
            NonlinearityKind::Saturable => self.c * s / ((1.0 + s) * (1.0 + s)),
        }
    }
}

/// One Gaussian bump `A exp(-|x - x0|^2 / (2 w^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center: [f64; 3],
    pub width: f64,
}

/// External potential: a finite sum of Gaussians, hence Schwartz class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub terms: Vec<GaussianTerm>,
}

impl Potential {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn gaussian(amplitude: f64, center: [f64; 3], width: f64) -> Self {
        Self {
            terms: vec![GaussianTerm {
                amplitude,
                center,
                width,
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    /// `(V(x), grad V(x))`.
    pub fn eval(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for t in &self.terms {
            let d = [x[0] - t.center[0], x[1] - t.center[1], x[2] - t.center[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let w2 = t.width * t.width;
            let val = t.amplitude * (-r2 / (2.0 * w2)).exp();
            v += val;
            for k in 0..3 {
                g[k] -= d[k] / w2 * val;
            }
        }
        (v, g)
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        self.eval(x).0
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.iter().map(|t| t.amplitude.abs()).sum()
    }

    /// True when every center lies on the coordinate axis `axis` (0-based).
    /// Widths are scalar, so every term is isotropic about its center.
    pub fn is_axially_symmetric(&self, axis: usize) -> bool {
        self.terms
            .iter()
            .all(|t| (0..3).filter(|&k| k != axis).all(|k| t.center[k] == 0.0))
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<ConfigIssue>> {
        let mut issues = Vec::new();
        for t in &self.terms {
            if !(t.width > 0.0 && t.width.is_finite()) {
                issues.push(issue("potential.width", "widths must be positive"));
            }
            if !t.amplitude.is_finite() || t.center.iter().any(|c| !c.is_finite()) {
                issues.push(issue("potential", "non-finite amplitude or center"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

fn issue(field: &'static str, message: &str) -> ConfigIssue {
    ConfigIssue {
        field,
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub dim: usize,
    pub box_length: f64,
    pub grid_points: usize,
}

/// Seeded perturbation added to the initial soliton, scaled by `amplitude * sqrt(eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    /// Largest retained wavenumber of the random field.
    #[serde(default = "default_k_max")]
    pub k_max: f64,
    /// Width of the Gaussian envelope centered on the soliton.
    #[serde(default = "default_envelope")]
    pub envelope_width: f64,
}

fn default_k_max() -> f64 {
    2.0
}

fn default_envelope() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default)]
    pub reference_energy: Option<f64>,
    #[serde(default)]
    pub reference_mass: Option<f64>,
    pub epsilon: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_cadence")]
    pub extraction_cadence: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_iter")]
    pub newton_max_iter: usize,
    #[serde(default)]
    pub p0: [f64; 4],
    #[serde(default)]
    pub q0: [f64; 4],
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    /// Reporting threshold for `dt (pi N / L)^2`.
    #[serde(default = "default_stability")]
    pub stability_threshold: f64,
}

fn default_cadence() -> usize {
    50
}
fn default_newton_tol() -> f64 {
    1e-10
}
fn default_newton_iter() -> usize {
    30
}
fn default_stability() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    /// Steps between field snapshots; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_cadence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: Nonlinearity,
    #[serde(default)]
    pub potential: Potential,
    pub grid: GridSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A configuration that passed [`validate_config`], with derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub config: SimulationConfig,
    pub spacing: f64,
    /// Largest resolved wavenumber `pi N / L`.
    pub k_max: f64,
    /// `eps^(1/4)`; reporting only.
    pub mu: f64,
    /// `dt k_max^2`.
    pub stability_number: f64,
    pub warnings: Vec<String>,
}

impl ValidatedConfig {
    pub fn epsilon(&self) -> f64 {
        self.config.run.epsilon
    }
    pub fn dim(&self) -> usize {
        self.config.grid.dim
    }
    pub fn steps(&self) -> usize {
        (self.config.run.t_final / self.config.run.dt).round() as usize
    }
}

pub fn validate_config(cfg: &SimulationConfig) -> Result<ValidatedConfig> {
    let mut issues = Vec::new();
    if let Err(mut e) = cfg.model.validate() {
        issues.append(&mut e);
    }
    if let Err(mut e) = cfg.potential.validate() {
        issues.append(&mut e);
    }
    let g = &cfg.grid;
    if g.dim != 1 && g.dim != 3 {
        issues.push(issue("grid.dim", "dimension must be 1 or 3"));
    }
    if !(g.box_length > 0.0 && g.box_length.is_finite()) {
        issues.push(issue("grid.box_length", "box length must be positive"));
    }
    if g.grid_points < 4 || !g.grid_points.is_power_of_two() {
        issues.push(issue("grid.grid_points", "grid_points not power of two"));
    }
    let r = &cfg.run;
    if !(r.epsilon >= 0.0) {
        issues.push(issue("run.epsilon", "epsilon negative"));
    }
    if !(r.dt > 0.0 && r.dt.is_finite()) {
        issues.push(issue("run.dt", "time step must be positive"));
    }
    if !(r.t_final >= 0.0 && r.t_final.is_finite()) {
        issues.push(issue("run.t_final", "final time must be nonnegative"));
    }
    if r.extraction_cadence == 0 {
        issues.push(issue(
            "run.extraction_cadence",
            "cadence must be at least one step",
        ));
    }
    if !(r.newton_tol > 0.0) {
        issues.push(issue("run.newton_tol", "tolerance must be positive"));
    }
    if r.newton_max_iter == 0 {
        issues.push(issue("run.newton_max_iter", "need at least one iteration"));
    }
    match (r.reference_energy, r.reference_mass) {
        (Some(e), None) if e > 0.0 => {}
        (None, Some(m)) if m > 0.0 => {}
        (Some(_), Some(_)) => issues.push(issue(
            "run.reference_energy",
            "give exactly one of reference_energy and reference_mass",
        )),
        (None, None) => issues.push(issue(
            "run.reference_energy",
            "one of reference_energy and reference_mass is required",
        )),
        _ => issues.push(issue(
            "run.reference_energy",
            "reference value must be positive",
        )),
    }
    if r.p0.iter().chain(r.q0.iter()).any(|v| !v.is_finite()) {
        issues.push(issue("run.p0", "initial soliton data must be finite"));
    }
    if let Some(p) = &r.perturbation {
        if !(p.amplitude >= 0.0) || !(p.k_max > 0.0) || !(p.envelope_width > 0.0) {
            issues.push(issue(
                "run.perturbation",
                "amplitude >= 0, k_max > 0, envelope_width > 0",
            ));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }

    let spacing = g.box_length / g.grid_points as f64;
    let k_max = std::f64::consts::PI / spacing;
    let stability_number = r.dt * k_max * k_max;
    let mut warnings = Vec::new();
    if stability_number > r.stability_threshold {
        warnings.push(format!(
            "dt (pi N/L)^2 = {stability_number:.3} exceeds the accuracy threshold {}",
            r.stability_threshold
        ));
    }
    Ok(ValidatedConfig {
        config: cfg.clone(),
        spacing,
        k_max,
        mu: r.epsilon.powf(0.25),
        stability_number,
        warnings,
    })
}

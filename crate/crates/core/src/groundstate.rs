//! Ground states `-Lap b - beta'(b^2) b + E b = 0`, the mass curve `m(E)`, and
//! the boosted solitons `eta_p` with their tangent vectors.
//!
//! Profiles are radial. The 1D power family has a closed form; everything else
//! is shot from the origin with bisection on `b(0)`. Past the radius where the
//! outward shot loses accuracy, the tail is produced by integrating the full
//! equation inward from the asymptotic state `C e^{-sqrt(E) r} / r^{(d-1)/2}`,
//! with `C` fixed by continuity.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{apply_a, apply_symmetry, FieldState};
use crate::grid::Grid;
use crate::model::{Nonlinearity, NonlinearityKind};

/// Radial tabulation for the reference energy `E = 1`; scaled by `1/sqrt(E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGridSpec {
    pub r_max: f64,
    pub step: f64,
}

impl Default for RadialGridSpec {
    fn default() -> Self {
        Self {
            r_max: 45.0,
            step: 0.005,
        }
    }
}

impl RadialGridSpec {
    fn for_energy(&self, energy: f64) -> (f64, f64) {
        let s = energy.sqrt();
        (self.r_max / s, self.step / s)
    }
}

/// Unit-less radial shape; the profile is `amp * shape(r_scale * r)`.
#[derive(Debug, Clone)]
enum Shape {
    /// `amp sech^{1/sigma}(sigma kappa r)`
    Sech {
        amp: f64,
        sigma: f64,
        kappa: f64,
        r_max: f64,
        step: f64,
    },
    /// `log b` on `r_i = i h`, with an `e^{-kappa r} r^{-(d-1)/2}` tail beyond the table.
    Table {
        step: f64,
        log_b: Vec<f64>,
        kappa: f64,
        dim: usize,
    },
}

fn ln_sech(z: f64) -> f64 {
    let z = z.abs();
    // ln sech z = -z - ln((1 + e^{-2z}) / 2)
    -z - ((-2.0 * z).exp()).ln_1p() + std::f64::consts::LN_2
}

impl Shape {
    fn eval(&self, r: f64) -> f64 {
        match self {
            Shape::Sech {
                amp, sigma, kappa, ..
            } => amp * (ln_sech(sigma * kappa * r) / sigma).exp(),
            Shape::Table { .. } => self.log_eval(r).exp(),
        }
    }

    fn log_eval(&self, r: f64) -> f64 {
        match self {
            Shape::Sech {
                amp, sigma, kappa, ..
            } => amp.ln() + ln_sech(sigma * kappa * r) / sigma,
            Shape::Table {
                step,
                log_b,
                kappa,
                dim,
            } => {
                let r = r.abs();
                let n = log_b.len();
                let u = r / step;
                let last = (n - 1) as f64;
                if u >= last - 1.0 {
                    let r_end = (n - 1) as f64 * step;
                    let mut v = log_b[n - 1] - kappa * (r - r_end);
                    if *dim == 3 {
                        v -= (r / r_end).ln();
                    }
                    return v;
                }
                // 4-point Lagrange on log b, even reflection through r = 0
                let i = u.floor() as isize;
                let t = u - i as f64;
                let at = |j: isize| log_b[j.unsigned_abs()];
                let (f0, f1, f2, f3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
                let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
                let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
                let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
                let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
                w0 * f0 + w1 * f1 + w2 * f2 + w3 * f3
            }
        }
    }

    fn table(&self) -> (f64, Vec<f64>) {
        match self {
            Shape::Sech { r_max, step, .. } => {
                let n = (r_max / step).round() as usize + 1;
                (*step, (0..n).map(|i| self.eval(i as f64 * step)).collect())
            }
            Shape::Table { step, log_b, .. } => (*step, log_b.iter().map(|v| v.exp()).collect()),
        }
    }
}

fn sphere_area(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        4.0 * std::f64::consts::PI
    }
}

/// Radial ground state `b_E`.
#[derive(Debug, Clone)]
pub struct GroundStateProfile {
    energy: f64,
    dim: usize,
    model: Nonlinearity,
    shape: Arc<Shape>,
    amp_scale: f64,
    r_scale: f64,
    mass: f64,
    pub warnings: Vec<String>,
}

impl GroundStateProfile {
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &Nonlinearity {
        &self.model
    }

    /// `m = P_4(b) / 2`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Asymptotic decay rate `sqrt(E)`.
    pub fn decay_rate(&self) -> f64 {
        self.energy.sqrt()
    }

    /// `b(r)` for any `r >= 0` (log-cubic interpolation between table nodes).
    pub fn eval(&self, r: f64) -> f64 {
        self.amp_scale * self.shape.eval(self.r_scale * r)
    }

    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }

    /// Tabulated `(r_i, b(r_i))`.
    pub fn samples(&self) -> (Vec<f64>, Vec<f64>) {
        let (h, b) = self.shape.table();
        let r = (0..b.len()).map(|i| i as f64 * h / self.r_scale).collect();
        let b = b.into_iter().map(|v| v * self.amp_scale).collect();
        (r, b)
    }

    /// Decay rate measured from the tabulated tail.
    pub fn measured_decay_rate(&self) -> f64 {
        let (r, b) = self.samples();
        let b0 = b[0];
        let i = b
            .iter()
            .position(|&v| v < 1e-8 * b0)
            .unwrap_or(b.len() - 2)
            .max(2);
        let g = |j: usize| {
            let mut v = b[j].ln();
            if self.dim == 3 {
                v += r[j].ln();
            }
            v
        };
        -(g(i + 1) - g(i - 1)) / (r[i + 1] - r[i - 1])
    }

    /// Discrete `L2` norm of `-Lap b - beta'(b^2) b + E b` on the radial table,
    /// fourth-order differences, measure `|S^{d-1}| r^{d-1} dr`.
    pub fn residual(&self) -> f64 {
        let (r, b) = self.samples();
        let h = r[1] - r[0];
        let n = b.len();
        let at = |j: isize| b[j.unsigned_abs()];
        let mut acc = 0.0;
        for i in 0..n - 2 {
            let j = i as isize;
            let d2 = (-at(j - 2) + 16.0 * at(j - 1) - 30.0 * at(j) + 16.0 * at(j + 1) - at(j + 2))
                / (12.0 * h * h);
            let lap = if self.dim == 1 {
                d2
            } else if i == 0 {
                3.0 * d2
            } else {
                let d1 = (at(j - 2) - 8.0 * at(j - 1) + 8.0 * at(j + 1) - at(j + 2)) / (12.0 * h);
                d2 + 2.0 / r[i] * d1
            };
            let bi = b[i];
            let res = -lap - self.model.beta_prime(bi * bi) * bi + self.energy * bi;
            let w = if i == 0 { 0.5 } else { 1.0 }
                * h
                * r[i].powi(self.dim as i32 - 1)
                * sphere_area(self.dim);
            acc += w * res * res;
        }
        acc.sqrt()
    }

    /// Sample `b(|x|)` on a Cartesian grid centered at the origin.
    pub fn on_grid(&self, grid: &Arc<Grid>) -> Result<FieldState> {
        self.check_decay(grid)?;
        Ok(FieldState::from_fn(grid, |x| {
            Complex64::new(
                self.eval((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()),
                0.0,
            )
        }))
    }

    /// Wrap-around guard: `b(L/2) <= 1e-10 b(0)`.
    pub fn check_decay(&self, grid: &Grid) -> Result<()> {
        let ratio = self.eval(0.5 * grid.length()) / self.peak();
        if ratio > 1e-10 {
            Err(Error::WrapAround { ratio })
        } else {
            Ok(())
        }
    }
}

fn profile_mass(shape: &Shape, dim: usize, amp_scale: f64, r_scale: f64) -> f64 {
    let (h, b) = shape.table();
    let area = sphere_area(dim);
    let n = b.len();
    let mut s = 0.0;
    for (i, v) in b.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        s += w * (i as f64 * h).powi(dim as i32 - 1) * v * v;
    }
    let integral = s * h * area * amp_scale * amp_scale / r_scale.powi(dim as i32);
    0.5 * integral
}

fn build_profile(
    model: Nonlinearity,
    energy: f64,
    dim: usize,
    shape: Arc<Shape>,
    amp_scale: f64,
    r_scale: f64,
) -> GroundStateProfile {
    let mut warnings = Vec::new();
    if dim == 3 && model.kind == NonlinearityKind::Power && model.sigma >= 2.0 / 3.0 {
        warnings.push(format!(
            "sigma = {} >= 2/3 in 3D: dm/dE < 0, H2 is expected to fail",
            model.sigma
        ));
    }
    let mass = profile_mass(&shape, dim, amp_scale, r_scale);
    GroundStateProfile {
        energy,
        dim,
        model,
        shape,
        amp_scale,
        r_scale,
        mass,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shot {
    /// crossed zero at this radius
    Over,
    /// turned upward
    Under,
    /// reached the end of the interval while still positive and decreasing
    Undecided,
}

struct RadialOde<'a> {
    model: &'a Nonlinearity,
    energy: f64,
    dim: usize,
}

impl RadialOde<'_> {
    #[inline]
    fn accel(&self, r: f64, b: f64, db: f64) -> f64 {
        let f = (self.energy - self.model.beta_prime(b * b)) * b;
        if self.dim == 1 {
            f
        } else if r == 0.0 {
            f / 3.0
        } else {
            f - 2.0 / r * db
        }
    }

    #[inline]
    fn rk4(&self, r: f64, b: f64, db: f64, h: f64) -> (f64, f64) {
        let k1b = db;
        let k1v = self.accel(r, b, db);
        let k2b = db + 0.5 * h * k1v;
        let k2v = self.accel(r + 0.5 * h, b + 0.5 * h * k1b, k2b);
        let k3b = db + 0.5 * h * k2v;
        let k3v = self.accel(r + 0.5 * h, b + 0.5 * h * k2b, k3b);
        let k4b = db + h * k3v;
        let k4v = self.accel(r + h, b + h * k3b, k4b);
        (
            b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
            db + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        )
    }

    /// Outward shot from `b(0) = b0`; samples every `sub` steps when `out` is given.
    fn shoot(
        &self,
        b0: f64,
        h: f64,
        steps: usize,
        sub: usize,
        mut out: Option<&mut Vec<f64>>,
    ) -> Shot {
        let (mut b, mut db) = (b0, 0.0);
        if let Some(o) = out.as_deref_mut() {
            o.push(b);
        }
        for s in 0..steps {
            let r = s as f64 * h;
            let (nb, ndb) = self.rk4(r, b, db, h);
            b = nb;
            db = ndb;
            if let Some(o) = out.as_deref_mut() {
                if (s + 1) % sub == 0 {
                    o.push(b);
                }
            }
            if b <= 0.0 {
                return Shot::Over;
            }
            if db > 0.0 {
                return Shot::Under;
            }
        }
        Shot::Undecided
    }

    /// Inward integration of the decaying solution from `r_end` down to `r_stop`;
    /// returns samples at `r_end, r_end - h_out, ...` (descending).
    fn shoot_inward(&self, amp: f64, r_end: f64, h: f64, steps: usize, sub: usize) -> Vec<f64> {
        let kappa = self.energy.sqrt();
        let geo = if self.dim == 3 { 1.0 / r_end } else { 1.0 };
        let mut b = amp * (-kappa * r_end).exp() * geo;
        let mut db = b * (-kappa - if self.dim == 3 { 1.0 / r_end } else { 0.0 });
        let mut out = vec![b];
        for s in 0..steps {
            let r = r_end - s as f64 * h;
            let (nb, ndb) = self.rk4(r, b, db, -h);
            b = nb;
            db = ndb;
            if (s + 1) % sub == 0 {
                out.push(b);
            }
        }
        out
    }
}

const RK_SUBSTEPS: usize = 5;

fn initial_peak_guess(model: &Nonlinearity, energy: f64) -> f64 {
    match model.kind {
        NonlinearityKind::Power => ((1.0 + model.sigma) * energy / model.c).powf(0.5 / model.sigma),
        NonlinearityKind::Saturable => 1.0,
    }
}

fn shoot_profile(
    model: &Nonlinearity,
    energy: f64,
    dim: usize,
    spec: &RadialGridSpec,
) -> Result<Shape> {
    let (r_max, step) = spec.for_energy(energy);
    let n_out = (r_max / step).round() as usize;
    let h = step / RK_SUBSTEPS as f64;
    let ode = RadialOde { model, energy, dim };
    let total = n_out * RK_SUBSTEPS;

    let classify = |b0: f64| match ode.shoot(b0, h, total, RK_SUBSTEPS, None) {
        Shot::Undecided => Shot::Under,
        s => s,
    };
    let guess = initial_peak_guess(model, energy);
    let (mut lo, mut hi) = (guess, guess);
    let mut tries = 0;
    while classify(lo) != Shot::Under {
        lo *= 0.5;
        tries += 1;
        if tries > 80 {
            return Err(Error::NonConvergence {
                what: "ground-state bracketing (undershoot)",
                iterations: tries,
                residual: lo,
            });
        }
    }
    tries = 0;
    while classify(hi) != Shot::Over {
        hi *= 2.0;
        tries += 1;
        if tries > 80 {
            return Err(Error::NonConvergence {
                what: "ground-state bracketing (overshoot); no ground state at this energy",
                iterations: tries,
                residual: hi,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if classify(mid) == Shot::Over {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let mut b_lo = Vec::with_capacity(n_out + 1);
    let mut b_hi = Vec::with_capacity(n_out + 1);
    ode.shoot(lo, h, total, RK_SUBSTEPS, Some(&mut b_lo));
    ode.shoot(hi, h, total, RK_SUBSTEPS, Some(&mut b_hi));
    let common = b_lo.len().min(b_hi.len());
    let mut i_div = common - 1;
    for i in 1..common {
        let ok = b_lo[i] > 0.0
            && b_hi[i] > 0.0
            && b_lo[i] < b_lo[i - 1]
            && (b_hi[i] - b_lo[i]).abs() <= 1e-10 * b_lo[i];
        if !ok {
            i_div = i - 1;
            break;
        }
    }
    // back off one decay length so the outward solution is well inside its accurate range
    let back = (1.0 / (energy.sqrt() * step)).ceil() as usize;
    let i_match = i_div.saturating_sub(back);
    if i_match < 4 || b_lo[i_match] > 0.5 * lo {
        return Err(Error::NonConvergence {
            what: "ground-state shooting (accuracy region too short)",
            iterations: 200,
            residual: (i_match as f64) * step,
        });
    }

    // tail: inward from r_max, amplitude fixed by continuity at r_match (secant)
    let r_end = n_out as f64 * step;
    let in_steps = (n_out - i_match) * RK_SUBSTEPS;
    let target = b_lo[i_match];
    let value_at_match = |c: f64| {
        *ode.shoot_inward(c, r_end, h, in_steps, RK_SUBSTEPS)
            .last()
            .unwrap()
    };
    let mut c0 = 1.0;
    let mut f0 = value_at_match(c0) - target;
    let mut c1 = c0 * target / (f0 + target);
    let mut f1 = value_at_match(c1) - target;
    for _ in 0..50 {
        if f1.abs() <= 1e-15 * target || f1 == f0 {
            break;
        }
        let c2 = c1 - f1 * (c1 - c0) / (f1 - f0);
        c0 = c1;
        f0 = f1;
        c1 = c2;
        f1 = value_at_match(c1) - target;
    }
    let tail = ode.shoot_inward(c1, r_end, h, in_steps, RK_SUBSTEPS);

    let mut log_b = Vec::with_capacity(n_out + 1);
    log_b.extend(b_lo[..=i_match].iter().map(|v| v.ln()));
    log_b.extend(tail.iter().rev().skip(1).map(|v| v.ln()));
    debug_assert_eq!(log_b.len(), n_out + 1);
    if log_b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotGroundState(
            "non-positive value in the tail".into(),
        ));
    }
    Ok(Shape::Table {
        step,
        log_b,
        kappa: energy.sqrt(),
        dim,
    })
}

/// Solve for the ground state at energy `E`.
pub fn solve_ground_state(
    model: &Nonlinearity,
    energy: f64,
    dim: usize,
    spec: &RadialGridSpec,
) -> Result<GroundStateProfile> {
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::Domain(format!("energy {energy} must be positive")));
    }
    if dim != 1 && dim != 3 {
        return Err(Error::Dimension(format!("dimension {dim}")));
    }
    let shape = if dim == 1 && model.kind == NonlinearityKind::Power {
        let (r_max, step) = spec.for_energy(energy);
        Shape::Sech {
            amp: ((1.0 + model.sigma) * energy / model.c).powf(0.5 / model.sigma),
            sigma: model.sigma,
            kappa: energy.sqrt(),
            r_max,
            step,
        }
    } else {
        shoot_profile(model, energy, dim, spec)?
    };
    let profile = build_profile(*model, energy, dim, Arc::new(shape), 1.0, 1.0);
    check_ground_state(&profile)?;
    Ok(profile)
}

fn check_ground_state(p: &GroundStateProfile) -> Result<()> {
    let (_, b) = p.samples();
    if b.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotGroundState("sign change detected".into()));
    }
    if b.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::NotGroundState(
            "profile is not monotone decreasing".into(),
        ));
    }
    Ok(())
}

/// Shooting-only solve (no closed form), used to cross-check the 1D power case.
pub fn solve_ground_state_by_shooting(
    model: &Nonlinearity,
    energy: f64,
    dim: usize,
    spec: &RadialGridSpec,
) -> Result<GroundStateProfile> {
    let shape = shoot_profile(model, energy, dim, spec)?;
    let profile = build_profile(*model, energy, dim, Arc::new(shape), 1.0, 1.0);
    check_ground_state(&profile)?;
    Ok(profile)
}

/// The ground states `E -> b_E` of one model in one dimension.
///
/// For the power family a single solve at `E = 1` is rescaled exactly:
/// `b_E(r) = E^{1/(2 sigma)} b_1(sqrt(E) r)`.
#[derive(Debug, Clone)]
pub struct GroundStateFamily {
    model: Nonlinearity,
    dim: usize,
    spec: RadialGridSpec,
    reference: Option<GroundStateProfile>,
}

impl GroundStateFamily {
    pub fn new(model: Nonlinearity, dim: usize) -> Result<Self> {
        Self::with_spec(model, dim, RadialGridSpec::default())
    }

    pub fn with_spec(model: Nonlinearity, dim: usize, spec: RadialGridSpec) -> Result<Self> {
        if let Err(issues) = model.validate() {
            return Err(Error::Config(issues));
        }
        let reference = match model.kind {
            NonlinearityKind::Power => Some(solve_ground_state(&model, 1.0, dim, &spec)?),
            NonlinearityKind::Saturable => None,
        };
        Ok(Self {
            model,
            dim,
            spec,
            reference,
        })
    }

    pub fn model(&self) -> &Nonlinearity {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mass exponent `gamma` of `m(E) = m(1) E^gamma` for the power family.
    fn mass_exponent(&self) -> f64 {
        1.0 / self.model.sigma - 0.5 * self.dim as f64
    }

    pub fn profile(&self, energy: f64) -> Result<GroundStateProfile> {
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::Domain(format!("energy {energy} must be positive")));
        }
        match &self.reference {
            Some(r) => {
                let mut p = build_profile(
                    self.model,
                    energy,
                    self.dim,
                    r.shape.clone(),
                    energy.powf(0.5 / self.model.sigma),
                    energy.sqrt(),
                );
                p.mass = r.mass * energy.powf(self.mass_exponent());
                Ok(p)
            }
            None => solve_ground_state(&self.model, energy, self.dim, &self.spec),
        }
    }

    pub fn mass(&self, energy: f64) -> Result<f64> {
        match &self.reference {
            Some(r) if energy > 0.0 => Ok(r.mass * energy.powf(self.mass_exponent())),
            _ => Ok(self.profile(energy)?.mass()),
        }
    }

    /// `dm/dE` by centered differences with `h = 1e-4 E` and one Richardson step.
    pub fn mass_slope(&self, energy: f64) -> Result<f64> {
        let h = 1e-4 * energy;
        if !(energy + h > energy) {
            return Err(Error::StepUnderflow);
        }
        let d = |h: f64| -> Result<f64> {
            Ok((self.mass(energy + h)? - self.mass(energy - h)?) / (2.0 * h))
        };
        let (d1, d2) = (d(h)?, d(0.5 * h)?);
        Ok((4.0 * d2 - d1) / 3.0)
    }

    /// `db_E/dE` at the radii `r`, centered differences with Richardson.
    pub fn profile_energy_derivative(&self, energy: f64, r: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-4 * energy;
        if !(energy + h > energy) {
            return Err(Error::StepUnderflow);
        }
        let pp = self.profile(energy + h)?;
        let pm = self.profile(energy - h)?;
        let qp = self.profile(energy + 0.5 * h)?;
        let qm = self.profile(energy - 0.5 * h)?;
        Ok(r.iter()
            .map(|&x| {
                let d1 = (pp.eval(x) - pm.eval(x)) / (2.0 * h);
                let d2 = (qp.eval(x) - qm.eval(x)) / h;
                (4.0 * d2 - d1) / 3.0
            })
            .collect())
    }
}

/// Mass `m = P_4(b) / 2`.
pub fn mass_of(profile: &GroundStateProfile) -> f64 {
    profile.mass()
}

/// Sampled `m(E)` with slopes.
#[derive(Debug, Clone)]
pub struct MassCurve {
    family: Arc<GroundStateFamily>,
    pub energies: Vec<f64>,
    pub masses: Vec<f64>,
    pub slopes: Vec<f64>,
    pub monotone: bool,
}

pub fn mass_curve(
    family: Arc<GroundStateFamily>,
    e_min: f64,
    e_max: f64,
    n_samples: usize,
) -> Result<MassCurve> {
    if n_samples < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            got: n_samples,
        });
    }
    if !(e_min > 0.0 && e_max > e_min) {
        return Err(Error::Domain(format!("energy range [{e_min}, {e_max}]")));
    }
    let energies: Vec<f64> = (0..n_samples)
        .map(|i| e_min + (e_max - e_min) * i as f64 / (n_samples - 1) as f64)
        .collect();
    let masses = energies
        .iter()
        .map(|&e| family.mass(e))
        .collect::<Result<Vec<_>>>()?;
    let slopes = energies
        .iter()
        .map(|&e| family.mass_slope(e))
        .collect::<Result<Vec<_>>>()?;
    let monotone = masses.windows(2).all(|w| w[1] > w[0]) && slopes.iter().all(|&s| s > 0.0);
    Ok(MassCurve {
        family,
        energies,
        masses,
        slopes,
        monotone,
    })
}

/// H2 check: every sampled slope positive; the first violation is reported.
pub fn check_h2(curve: &MassCurve) -> Result<()> {
    for (e, s) in curve.energies.iter().zip(&curve.slopes) {
        if !(*s > 0.0) {
            return Err(Error::H2Violation {
                energy: *e,
                slope: *s,
            });
        }
    }
    Ok(())
}

impl MassCurve {
    pub fn family(&self) -> &Arc<GroundStateFamily> {
        &self.family
    }

    pub fn mass_range(&self) -> (f64, f64) {
        (self.masses[0], *self.masses.last().unwrap())
    }

    /// `dm/dE` at any energy.
    pub fn slope_at(&self, energy: f64) -> Result<f64> {
        self.family.mass_slope(energy)
    }

    /// Inverse of `m(E)`: bracket from the samples, then Illinois regula falsi
    /// on the family's mass to `|m(E*) - m| <= 1e-12 m`.
    pub fn energy_of_mass(&self, m: f64) -> Result<f64> {
        if !self.monotone {
            return Err(Error::NonMonotone);
        }
        let (lo_m, hi_m) = self.mass_range();
        if !(m >= lo_m && m <= hi_m) {
            return Err(Error::OutOfRange {
                what: "mass",
                value: m,
                lo: lo_m,
                hi: hi_m,
            });
        }
        let k = self
            .masses
            .partition_point(|&x| x < m)
            .clamp(1, self.masses.len() - 1);
        let (mut a, mut b) = (self.energies[k - 1], self.energies[k]);
        let (mut fa, mut fb) = (self.masses[k - 1] - m, self.masses[k] - m);
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        let mut side = 0;
        for _ in 0..200 {
            let c = (a * fb - b * fa) / (fb - fa);
            let c = if c > a.min(b) && c < a.max(b) {
                c
            } else {
                0.5 * (a + b)
            };
            let fc = self.family.mass(c)? - m;
            if fc.abs() <= 1e-12 * m || (b - a).abs() <= 1e-15 * c {
                return Ok(c);
            }
            if (fc > 0.0) == (fb > 0.0) {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            }
        }
        Err(Error::NonConvergence {
            what: "energy_of_mass",
            iterations: 200,
            residual: fa.abs().min(fb.abs()),
        })
    }
}

/// `p = (p_1, p_2, p_3, p_4)` with `P_4(eta_p) = 2m + p_4`; `q = (q^1, q^2, q^3, q^4)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolitonParameters {
    pub p: [f64; 4],
    pub q: [f64; 4],
}

/// The soliton manifold at a fixed reference mass `m`.
#[derive(Debug, Clone)]
pub struct SolitonManifold {
    pub curve: Arc<MassCurve>,
    pub mass: f64,
}

impl SolitonManifold {
    pub fn new(curve: Arc<MassCurve>, mass: f64) -> Result<Self> {
        curve.energy_of_mass(mass)?;
        Ok(Self { curve, mass })
    }

    pub fn family(&self) -> &GroundStateFamily {
        self.curve.family()
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    /// `m + p_4 / 2`, validated positive and inside the curve.
    pub fn effective_mass(&self, p: &[f64; 4]) -> Result<f64> {
        let m = self.mass + 0.5 * p[3];
        let (lo, hi) = self.curve.mass_range();
        if !(m > 0.0 && m >= lo && m <= hi) {
            return Err(Error::OutOfRange {
                what: "m + p4/2",
                value: m,
                lo,
                hi,
            });
        }
        Ok(m)
    }

    pub fn energy(&self, p: &[f64; 4]) -> Result<f64> {
        self.curve.energy_of_mass(self.effective_mass(p)?)
    }

    pub fn profile(&self, p: &[f64; 4]) -> Result<GroundStateProfile> {
        self.family().profile(self.energy(p)?)
    }
}

/// `eta_p`, its `p`-derivatives and `A_j eta_p`, all centered at the origin.
#[derive(Debug, Clone)]
pub struct SolitonFrame {
    pub p: [f64; 4],
    pub mass: f64,
    pub energy: f64,
    pub eta: FieldState,
    /// `d eta_p / d p_j` for the active indices (0-based; others `None`).
    pub d_eta: [Option<FieldState>; 4],
    /// `A_j eta_p` for the active indices.
    pub a_eta: [Option<FieldState>; 4],
}

/// Active coordinate indices: spatial axes of the grid plus the gauge.
pub fn active_indices(dim: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..dim).collect();
    v.push(3);
    v
}

fn boost_phase(p: &[f64; 4], m: f64, x: [f64; 3]) -> f64 {
    -(p[0] * x[0] + p[1] * x[1] + p[2] * x[2]) / (2.0 * m)
}

/// `eta_p(x) = exp(-i p.x / (2(m + p_4/2))) b_{E(m + p_4/2)}(x)` on the grid.
pub fn soliton_at_origin(
    p: &[f64; 4],
    manifold: &SolitonManifold,
    grid: &Arc<Grid>,
) -> Result<FieldState> {
    check_dim(manifold, grid)?;
    let m = manifold.effective_mass(p)?;
    let profile = manifold.profile(p)?;
    profile.check_decay(grid)?;
    Ok(FieldState::from_fn(grid, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        Complex64::from_polar(profile.eval(r), boost_phase(p, m, x))
    }))
}

fn check_dim(manifold: &SolitonManifold, grid: &Grid) -> Result<()> {
    if manifold.dim() != grid.dim() {
        Err(Error::Dimension(format!(
            "manifold is {}D, grid is {}D",
            manifold.dim(),
            grid.dim()
        )))
    } else {
        Ok(())
    }
}

/// `e^{q^j J A_j} eta_p` on the grid (translation applied spectrally).
pub fn build_soliton(
    params: &SolitonParameters,
    manifold: &SolitonManifold,
    grid: &Arc<Grid>,
) -> Result<FieldState> {
    let eta = soliton_at_origin(&params.p, manifold, grid)?;
    Ok(apply_symmetry(&eta, &params.q))
}

pub fn soliton_frame(
    p: &[f64; 4],
    manifold: &SolitonManifold,
    grid: &Arc<Grid>,
) -> Result<SolitonFrame> {
    check_dim(manifold, grid)?;
    let m = manifold.effective_mass(p)?;
    let energy = manifold.energy(p)?;
    let family = manifold.family();
    let profile = family.profile(energy)?;
    profile.check_decay(grid)?;
    let radii: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
        })
        .collect();
    let phases: Vec<Complex64> = (0..grid.len())
        .map(|i| Complex64::from_polar(1.0, boost_phase(p, m, grid.point(i))))
        .collect();
    let b: Vec<f64> = radii.iter().map(|&r| profile.eval(r)).collect();
    let eta = FieldState::from_values(grid, b.iter().zip(&phases).map(|(v, e)| e * v).collect())?;

    let mut d_eta: [Option<FieldState>; 4] = Default::default();
    let mut a_eta: [Option<FieldState>; 4] = Default::default();
    let im = Complex64::new(0.0, 1.0);
    for j in active_indices(grid.dim()) {
        let d = if j < 3 {
            // phase derivative: -i x_j / (2m)
            FieldState::from_values(
                grid,
                (0..grid.len())
                    .map(|i| -im * grid.point(i)[j] / (2.0 * m) * eta.values()[i])
                    .collect(),
            )?
        } else {
            // d/dp_4 = (1/2) d/dm: phase part plus (1/2) (db/dE) / (dm/dE)
            let db_de = family.profile_energy_derivative(energy, &radii)?;
            let dm_de = family.mass_slope(energy)?;
            FieldState::from_values(
                grid,
                (0..grid.len())
                    .map(|i| {
                        let x = grid.point(i);
                        let dot = p[0] * x[0] + p[1] * x[1] + p[2] * x[2];
                        let phase_part = im * dot / (4.0 * m * m) * eta.values()[i];
                        phase_part + phases[i] * (0.5 * db_de[i] / dm_de)
                    })
                    .collect(),
            )?
        };
        d_eta[j] = Some(d);
        a_eta[j] = Some(apply_a(&eta, j + 1)?);
    }
    Ok(SolitonFrame {
        p: *p,
        mass: m,
        energy,
        eta,
        d_eta,
        a_eta,
    })
}

/// `d eta_p / d p_j` (1-based `j`), centered at the origin.
pub fn soliton_tangent(
    p: &[f64; 4],
    j: usize,
    manifold: &SolitonManifold,
    grid: &Arc<Grid>,
) -> Result<FieldState> {
    if !(1..=4).contains(&j) {
        return Err(Error::Domain(format!("tangent index {j} not in 1..=4")));
    }
    let frame = soliton_frame(p, manifold, grid)?;
    Ok(frame.d_eta[j - 1]
        .clone()
        .unwrap_or_else(|| FieldState::zeros(grid)))
}

/// `lambda^j(p) = p_j / m'` and `lambda^4 = -(E(m') + |p|^2 / (4 m'^2))`, `m' = m + p_4/2`.
pub fn lambda_multipliers(p: &[f64; 4], manifold: &SolitonManifold) -> Result<[f64; 4]> {
    let m = manifold.effective_mass(p)?;
    let e = manifold.energy(p)?;
    let p2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    Ok([p[0] / m, p[1] / m, p[2] / m, -(e + p2 / (4.0 * m * m))])
}

/// `|| -Lap eta_p + grad H_P(eta_p) - lambda^j A_j eta_p ||_{L2}` on the grid,
/// with `grad H_P(psi) = -beta'(|psi|^2) psi`.
pub fn residual_check(p: &[f64; 4], manifold: &SolitonManifold, grid: &Arc<Grid>) -> Result<f64> {
    let eta = soliton_at_origin(p, manifold, grid)?;
    let lambda = lambda_multipliers(p, manifold)?;
    let model = *manifold.family().model();
    let ksq = grid.k_squared();
    let lap = eta.map_spectrum(|i, v| v * ksq[i]);
    let mut res = lap;
    for (r, e) in res.values_mut().iter_mut().zip(eta.values()) {
        *r -= model.beta_prime(e.norm_sqr()) * e;
    }
    for j in 1..=4 {
        if lambda[j - 1] != 0.0 {
            let a = apply_a(&eta, j)?;
            res.add_scaled(Complex64::new(-lambda[j - 1], 0.0), &a)?;
        }
    }
    Ok(crate::field::l2_norm_sq(&res).sqrt())
}

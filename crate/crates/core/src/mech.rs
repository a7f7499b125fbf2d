//! The effective point-particle system
//! `H_mech = |p|^2 / 2m + eps V_eff(q)`, `V_eff(q) = int V(x + q) b^2(x) dx`.
//!
//! `V_eff` is computed on the field grid as a spectral convolution and
//! evaluated off-grid by its trigonometric interpolant, truncated to the
//! modes that carry weight; value, gradient and Hessian come from the same
//! interpolant.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::groundstate::GroundStateProfile;
use crate::model::Potential;

/// Modes whose coefficient is below this fraction of the largest are dropped.
const MODE_CUTOFF: f64 = 1e-17;

#[derive(Debug, Clone)]
pub struct EffectivePotential {
    grid: Arc<Grid>,
    mass: f64,
    /// `V_eff` at the grid nodes.
    values: Vec<f64>,
    /// Retained modes: wavevector and coefficient of `e^{i k.(q - x_0)}`.
    modes: Vec<([f64; 3], Complex64)>,
}

impl EffectivePotential {
    /// `V_eff` for the soliton `b` (centered at the origin) on `grid`.
    pub fn build(
        potential: &Potential,
        profile: &GroundStateProfile,
        grid: &Arc<Grid>,
    ) -> Result<Self> {
        if profile.dim() != grid.dim() {
            return Err(Error::Dimension(format!(
                "profile is {}D, grid is {}D",
                profile.dim(),
                grid.dim()
            )));
        }
        profile.check_decay(grid)?;
        let n = grid.n();
        let h = grid.spacing();
        let wrapped = |i: usize| {
            if i < n / 2 {
                i as f64 * h
            } else {
                (i as f64 - n as f64) * h
            }
        };
        let mut dens: Vec<Complex64> = (0..grid.len())
            .map(|idx| {
                let ijk = grid.unflatten(idx);
                let mut r2 = 0.0;
                for a in 0..grid.dim() {
                    let x = wrapped(ijk[a]);
                    r2 += x * x;
                }
                let b = profile.eval(r2.sqrt());
                Complex64::new(b * b, 0.0)
            })
            .collect();
        let mut pot: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new(potential.value(grid.point(i)), 0.0))
            .collect();
        grid.fft_forward(&mut dens);
        grid.fft_forward(&mut pot);
        let dv = grid.cell_volume();
        let mut spec: Vec<Complex64> = pot.iter().zip(&dens).map(|(a, b)| a * b * dv).collect();
        let largest = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let scale = 1.0 / grid.len() as f64;
        let modes = spec
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > MODE_CUTOFF * largest)
            .map(|(i, c)| (grid.wavevector(i), c * scale))
            .collect();
        grid.fft_inverse(&mut spec);
        Ok(Self {
            grid: grid.clone(),
            mass: 0.5 * profile_mass_on_grid(profile, grid),
            values: spec.iter().map(|c| c.re).collect(),
            modes,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Soliton mass `int b^2 / 2` used in the convolution (grid quadrature).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Values at the grid nodes, in grid order.
    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn check_range(&self, q: &[f64; 3]) -> Result<()> {
        let half = 0.5 * self.grid.length();
        for &x in q.iter().take(self.dim()) {
            if !(x >= -half && x <= half) {
                return Err(Error::OutOfRange {
                    what: "mechanical position",
                    value: x,
                    lo: -half,
                    hi: half,
                });
            }
        }
        Ok(())
    }

    /// `(V_eff(q), grad V_eff(q))`.
    pub fn eval(&self, q: &[f64; 3]) -> Result<(f64, [f64; 3])> {
        self.check_range(q)?;
        let x0 = -0.5 * self.grid.length();
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for (k, c) in &self.modes {
            let mut ph = 0.0;
            for a in 0..self.dim() {
                ph += k[a] * (q[a] - x0);
            }
            let e = c * Complex64::from_polar(1.0, ph);
            v += e.re;
            for a in 0..self.dim() {
                g[a] -= k[a] * e.im;
            }
        }
        Ok((v, g))
    }

    pub fn value(&self, q: &[f64; 3]) -> Result<f64> {
        Ok(self.eval(q)?.0)
    }

    /// Hessian of the interpolant.
    pub fn hessian(&self, q: &[f64; 3]) -> Result<[[f64; 3]; 3]> {
        self.check_range(q)?;
        let x0 = -0.5 * self.grid.length();
        let mut hm = [[0.0; 3]; 3];
        for (k, c) in &self.modes {
            let mut ph = 0.0;
            for a in 0..self.dim() {
                ph += k[a] * (q[a] - x0);
            }
            let e = c * Complex64::from_polar(1.0, ph);
            for a in 0..self.dim() {
                for b in 0..self.dim() {
                    hm[a][b] -= k[a] * k[b] * e.re;
                }
            }
        }
        Ok(hm)
    }

    /// Critical points along axis 0 (1D problems, or the symmetry axis):
    /// sign changes of `dV_eff/dq_1` between nodes, refined by bisection.
    pub fn critical_points_on_axis(&self) -> Result<Vec<f64>> {
        let n = self.grid.n();
        let half = 0.5 * self.grid.length();
        let at = |x: f64| -> Result<f64> { Ok(self.eval(&[x, 0.0, 0.0])?.1[0]) };
        let mut out = Vec::new();
        let xs: Vec<f64> = (0..=n)
            .map(|i| -half + i as f64 * self.grid.spacing())
            .collect();
        let mut prev = at(xs[0])?;
        for w in xs.windows(2) {
            let cur = at(w[1])?;
            if prev == 0.0 {
                out.push(w[0]);
            } else if prev * cur < 0.0 {
                let (mut a, mut b, mut fa) = (w[0], w[1], prev);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    let fm = at(mid)?;
                    if fm == 0.0 || b - a < 1e-14 * (1.0 + mid.abs()) {
                        a = mid;
                        b = mid;
                        break;
                    }
                    if (fm > 0.0) == (fa > 0.0) {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                }
                out.push(0.5 * (a + b));
            }
            prev = cur;
        }
        Ok(out)
    }
}

fn profile_mass_on_grid(profile: &GroundStateProfile, grid: &Grid) -> f64 {
    (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let b = profile.eval((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt());
            b * b
        })
        .sum::<f64>()
        * grid.cell_volume()
}

/// Convenience wrapper.
pub fn build_effective_potential(
    potential: &Potential,
    profile: &GroundStateProfile,
    grid: &Arc<Grid>,
) -> Result<EffectivePotential> {
    EffectivePotential::build(potential, profile, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MechState {
    pub p: [f64; 3],
    pub q: [f64; 3],
    pub t: f64,
}

impl MechState {
    pub fn new(p: [f64; 3], q: [f64; 3]) -> Self {
        Self { p, q, t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// `|p|^2 / 2m + eps V_eff(q)`.
pub fn mech_energy(state: &MechState, m: f64, eps: f64, veff: &EffectivePotential) -> Result<f64> {
    let p2: f64 = state.p.iter().map(|v| v * v).sum();
    Ok(p2 / (2.0 * m) + eps * veff.value(&state.q)?)
}

/// `|p|^2 / 2m + V_eff(q)`, the form in the slow variables `p = mu^2 p~`, `eps = mu^4`.
pub fn mech_energy_scaled(state: &MechState, m: f64, veff: &EffectivePotential) -> Result<f64> {
    let p2: f64 = state.p.iter().map(|v| v * v).sum();
    Ok(p2 / (2.0 * m) + veff.value(&state.q)?)
}

#[derive(Debug, Clone)]
pub struct MechOrbit {
    pub samples: Vec<MechState>,
    pub energy: f64,
    pub mass: f64,
    pub eps: f64,
    pub dim: usize,
    /// Period when the orbit was closed by [`periodic_orbit`].
    pub period: Option<f64>,
}

/// Leapfrog integrator (kick-drift-kick).
#[derive(Debug, Clone)]
pub struct Leapfrog<'a> {
    pub veff: &'a EffectivePotential,
    pub mass: f64,
    pub eps: f64,
    pub dt: f64,
}

impl Leapfrog<'_> {
    fn force(&self, q: &[f64; 3]) -> Result<[f64; 3]> {
        if self.eps == 0.0 {
            return Ok([0.0; 3]);
        }
        let g = self.veff.eval(q)?.1;
        Ok([-self.eps * g[0], -self.eps * g[1], -self.eps * g[2]])
    }

    pub fn step(&self, s: &MechState) -> Result<MechState> {
        let d = self.veff.dim();
        let f0 = self.force(&s.q)?;
        let mut n = *s;
        for a in 0..d {
            n.p[a] += 0.5 * self.dt * f0[a];
            n.q[a] += self.dt * n.p[a] / self.mass;
        }
        let f1 = self.force(&n.q)?;
        for a in 0..d {
            n.p[a] += 0.5 * self.dt * f1[a];
        }
        n.t = s.t + self.dt;
        Ok(n)
    }
}

/// Integrate from `state0` for `round(T / |dt|)` steps (negative `dt` runs backwards).
pub fn mech_run(
    state0: &MechState,
    m: f64,
    eps: f64,
    veff: &EffectivePotential,
    dt: f64,
    t_total: f64,
) -> Result<MechOrbit> {
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step {dt}")));
    }
    let lf = Leapfrog {
        veff,
        mass: m,
        eps,
        dt,
    };
    let steps = (t_total / dt.abs()).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut s = *state0;
    samples.push(s);
    for _ in 0..steps {
        s = lf.step(&s)?;
        if !s.is_finite() {
            return Err(Error::BlowUp { time: s.t });
        }
        samples.push(s);
    }
    Ok(MechOrbit {
        energy: mech_energy(state0, m, eps, veff)?,
        samples,
        mass: m,
        eps,
        dim: veff.dim(),
        period: None,
    })
}

/// Times at which `p_1` changes sign (turning points on the axis), linearly
/// interpolated between samples.
fn turning_times(samples: &[MechState]) -> Vec<f64> {
    let mut out = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (w[0].p[0], w[1].p[0]);
        if a != 0.0 && a * b <= 0.0 {
            out.push(w[0].t + (w[1].t - w[0].t) * a / (a - b));
        }
    }
    out
}

/// Period of the axial oscillation through `state0`, measured with step `dt`
/// over at most `t_max`.
pub fn measure_period(
    state0: &MechState,
    m: f64,
    eps: f64,
    veff: &EffectivePotential,
    dt: f64,
    t_max: f64,
) -> Result<f64> {
    let lf = Leapfrog {
        veff,
        mass: m,
        eps,
        dt,
    };
    let starts_at_rest = state0.p[0] == 0.0;
    let mut events: Vec<f64> = if starts_at_rest {
        vec![0.0]
    } else {
        Vec::new()
    };
    let mut s = *state0;
    while s.t < t_max {
        let n = lf.step(&s)?;
        let found = turning_times(&[s, n]);
        events.extend(found);
        s = n;
        if events.len() >= 3 {
            return Ok(events[2] - events[0]);
        }
    }
    Err(Error::NonConvergence {
        what: "period detection (orbit not closed)",
        iterations: events.len(),
        residual: s.t,
    })
}

/// One period of the axial orbit through `state0`, sampled with at least
/// `samples_per_period` points.
pub fn periodic_orbit(
    state0: &MechState,
    m: f64,
    eps: f64,
    veff: &EffectivePotential,
    samples_per_period: usize,
    t_max: f64,
) -> Result<MechOrbit> {
    // coarse period estimate, then a dense pass over one period
    let guess_dt = {
        let hs = veff.hessian(&state0.q)?;
        let curv = hs[0][0].abs().max(1e-12);
        let omega = (eps * curv / m).sqrt().max(1e-12);
        (2.0 * PI / omega) / 2000.0
    };
    let coarse = measure_period(state0, m, eps, veff, guess_dt.min(t_max / 100.0), t_max)?;
    let dt = coarse / samples_per_period as f64;
    let period = measure_period(state0, m, eps, veff, dt, 2.0 * coarse)?;
    let mut orbit = mech_run(
        state0,
        m,
        eps,
        veff,
        period / samples_per_period as f64,
        period,
    )?;
    orbit.period = Some(period);
    Ok(orbit)
}

/// `|(dp, dq)|_eps = sqrt(sum dp_k^2 + eps dq_k^2)`.
pub fn weighted_norm(dp: &[f64; 3], dq: &[f64; 3], eps: f64) -> f64 {
    (0..3)
        .map(|k| dp[k] * dp[k] + eps * dq[k] * dq[k])
        .sum::<f64>()
        .sqrt()
}

/// Cubic Hermite interpolation of the state between samples `a` and `b` at
/// fraction `s`, using the equations of motion for the derivatives.
fn hermite(
    a: &MechState,
    b: &MechState,
    s: f64,
    m: f64,
    eps: f64,
    veff: &EffectivePotential,
) -> Result<MechState> {
    let dt = b.t - a.t;
    let fa = veff.eval(&a.q)?.1;
    let fb = veff.eval(&b.q)?.1;
    let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
    let h10 = s * s * s - 2.0 * s * s + s;
    let h01 = -2.0 * s * s * s + 3.0 * s * s;
    let h11 = s * s * s - s * s;
    let mut out = MechState {
        t: a.t + s * dt,
        ..*a
    };
    for k in 0..3 {
        out.q[k] = h00 * a.q[k] + h10 * dt * a.p[k] / m + h01 * b.q[k] + h11 * dt * b.p[k] / m;
        out.p[k] = h00 * a.p[k] - h10 * dt * eps * fa[k] + h01 * b.p[k] - h11 * dt * eps * fb[k];
    }
    Ok(out)
}

/// `d_eps`: distance from `point` to the orbit in the weighted norm, by a scan
/// over samples followed by golden-section refinement on the neighbouring
/// intervals.
pub fn orbit_distance(
    point: &MechState,
    orbit: &MechOrbit,
    veff: &EffectivePotential,
) -> Result<f64> {
    let s = &orbit.samples;
    if s.is_empty() {
        return Err(Error::EmptyOrbit);
    }
    let dist = |o: &MechState| {
        let dp = [
            point.p[0] - o.p[0],
            point.p[1] - o.p[1],
            point.p[2] - o.p[2],
        ];
        let dq = [
            point.q[0] - o.q[0],
            point.q[1] - o.q[1],
            point.q[2] - o.q[2],
        ];
        weighted_norm(&dp, &dq, orbit.eps)
    };
    let (best, mut dmin) =
        s.iter()
            .enumerate()
            .map(|(i, o)| (i, dist(o)))
            .fold(
                (0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );
    if s.len() == 1 {
        return Ok(dmin);
    }
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let last = s.len() - 1;
    let mut segments = vec![best.saturating_sub(1), best];
    // a closed orbit ends where it starts: the segments on both sides of the seam are neighbours
    if orbit.period.is_some() && (best == 0 || best == last) {
        segments.extend([0, last - 1]);
    }
    for seg in segments {
        if seg + 1 > last {
            continue;
        }
        let (a, b) = (&s[seg], &s[seg + 1]);
        let f =
            |x: f64| -> Result<f64> { Ok(dist(&hermite(a, b, x, orbit.mass, orbit.eps, veff)?)) };
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let mut f1 = f(x1)?;
        let mut f2 = f(x2)?;
        for _ in 0..60 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - golden * (hi - lo);
                f1 = f(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + golden * (hi - lo);
                f2 = f(x2)?;
            }
        }
        dmin = dmin.min(f1).min(f2);
    }
    Ok(dmin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueCheck {
    /// `H_mech / eps`, the level in units of `V_eff`.
    pub level: f64,
    pub critical_values: Vec<f64>,
    /// Smallest `|level - c|` over the critical values.
    pub distance: f64,
    pub margin: f64,
    pub passed: bool,
}

/// Checks that `H_mech / eps` stays `margin` away from every critical value of
/// `V_eff` on the axis, including the value 0 approached at infinity.
pub fn critical_value_check(
    h_mech: f64,
    eps: f64,
    veff: &EffectivePotential,
    margin: f64,
) -> Result<CriticalValueCheck> {
    if !(eps > 0.0) {
        return Err(Error::Domain("critical-value check needs eps > 0".into()));
    }
    let level = h_mech / eps;
    let mut values = vec![0.0];
    for q in veff.critical_points_on_axis()? {
        let v = veff.value(&[q, 0.0, 0.0])?;
        // the far field is flat; its spurious sign changes sit at the value 0
        if v.abs() > 1e-12 * veff.mass() {
            values.push(v);
        }
    }
    let distance = values
        .iter()
        .map(|c| (level - c).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(CriticalValueCheck {
        level,
        critical_values: values,
        distance,
        margin,
        passed: distance > margin,
    })
}

/// Harmonic period `2 pi sqrt(m / (eps V_eff''(q*)))` at a minimum `q*` on the axis.
pub fn harmonic_period(q_star: f64, m: f64, eps: f64, veff: &EffectivePotential) -> Result<f64> {
    let k = veff.hessian(&[q_star, 0.0, 0.0])?[0][0];
    if !(k > 0.0) {
        return Err(Error::Domain(format!("V_eff'' = {k} is not a well")));
    }
    Ok(2.0 * PI * (m / (eps * k)).sqrt())
}

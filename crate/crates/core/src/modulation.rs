//! The soliton chart `psi = e^{q JA} (eta_p + Pi_p phi)`: the projector onto
//! the symplectic complement of the tangent space, its inverse on the
//! reference space `Ran Pi_0`, and Newton extraction of `(p, q, phi)`.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Col, Mat};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{
    apply_symmetry, apply_symmetry_inverse, gradient, inner, momenta, norm, pairing, FieldState,
    Space,
};
use crate::grid::Grid;
use crate::groundstate::{
    active_indices, soliton_frame, SolitonFrame, SolitonManifold, SolitonParameters,
};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub type SolitonCoordinates = SolitonParameters;

/// Tangent data at `eta_p` together with the Gram matrix of the constraints.
#[derive(Debug, Clone)]
pub struct Tangents {
    pub frame: SolitonFrame,
    active: Vec<usize>,
    /// `-i A_j eta_p` (the directions `J A_j eta_p`).
    ja: Vec<FieldState>,
    /// `i d eta_p / d p_j` (so that `<E d_j eta, .>` is `<e_dj[j], .>`).
    e_dp: Vec<FieldState>,
    gram: Mat<f64>,
}

impl Tangents {
    pub fn new(p: &[f64; 4], manifold: &SolitonManifold, grid: &Arc<Grid>) -> Result<Self> {
        Ok(Self::from_frame(soliton_frame(p, manifold, grid)?))
    }

    pub fn from_frame(frame: SolitonFrame) -> Self {
        let active = active_indices(frame.eta.grid().dim());
        let ja: Vec<FieldState> = active
            .iter()
            .map(|&j| frame.a_eta[j].as_ref().unwrap().scale(-I))
            .collect();
        let e_dp: Vec<FieldState> = active
            .iter()
            .map(|&j| frame.d_eta[j].as_ref().unwrap().times_i())
            .collect();
        let k = active.len();
        let mut t = Self {
            frame,
            active,
            ja,
            e_dp,
            gram: Mat::zeros(2 * k, 2 * k),
        };
        // columns: correction directions (d_j eta, J A_j eta); rows: constraints
        let mut gram = Mat::zeros(2 * k, 2 * k);
        for c in 0..2 * k {
            let dir = if c < k { t.d_eta(c) } else { &t.ja[c - k] };
            let row = t.constraints_raw(dir);
            for (r, v) in row.iter().enumerate() {
                gram[(r, c)] = *v;
            }
        }
        t.gram = gram;
        t
    }

    pub fn p(&self) -> [f64; 4] {
        self.frame.p
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn eta(&self) -> &FieldState {
        &self.frame.eta
    }

    fn d_eta(&self, slot: usize) -> &FieldState {
        self.frame.d_eta[self.active[slot]].as_ref().unwrap()
    }

    fn a_eta(&self, slot: usize) -> &FieldState {
        self.frame.a_eta[self.active[slot]].as_ref().unwrap()
    }

    /// Constraint values in slot order: `<A_l eta, u>` then `<E d_l eta, u>`.
    fn constraints_raw(&self, u: &FieldState) -> Vec<f64> {
        let k = self.active.len();
        let mut out = Vec::with_capacity(2 * k);
        for s in 0..k {
            out.push(inner(self.a_eta(s), u).expect("same grid"));
        }
        for s in 0..k {
            out.push(inner(&self.e_dp[s], u).expect("same grid"));
        }
        out
    }

    /// The eight orthogonality values in the fixed layout
    /// `(<A_1 eta, u>, .., <A_4 eta, u>, <E d_1 eta, u>, .., <E d_4 eta, u>)`,
    /// zero for inactive directions.
    pub fn constraints(&self, u: &FieldState) -> Result<[f64; 8]> {
        if u.grid() != self.frame.eta.grid() {
            return Err(Error::GridMismatch);
        }
        let raw = self.constraints_raw(u);
        let k = self.active.len();
        let mut out = [0.0; 8];
        for (s, &j) in self.active.iter().enumerate() {
            out[j] = raw[s];
            out[4 + j] = raw[k + s];
        }
        Ok(out)
    }

    /// Condition number (2-norm) of the constraint Gram matrix.
    pub fn gram_condition(&self) -> f64 {
        let s = self.gram.singular_values().expect("svd of a small matrix");
        s[0] / s[s.len() - 1]
    }
}

/// `Pi_p Psi`: removes the tangent components so that all orthogonality
/// conditions hold. The coefficients solve the constraint Gram system, which
/// reduces to `Psi - sum <A_j eta, Psi> d_j eta + sum <E d_j eta, Psi> J A_j eta`
/// when the tangent normalization holds exactly.
pub fn project(psi: &FieldState, tangents: &Tangents) -> Result<FieldState> {
    if psi.grid() != tangents.frame.eta.grid() {
        return Err(Error::GridMismatch);
    }
    let k = tangents.active.len();
    let c = tangents.constraints_raw(psi);
    let rhs = Col::from_fn(2 * k, |i| c[i]);
    let coef = tangents.gram.partial_piv_lu().solve(&rhs);
    let mut out = psi.clone();
    for s in 0..k {
        out.add_scaled(Complex64::new(-coef[s], 0.0), tangents.d_eta(s))?;
        out.add_scaled(Complex64::new(-coef[k + s], 0.0), &tangents.ja[s])?;
    }
    Ok(out)
}

pub const INVERT_MAX_ITER: usize = 50;
pub const INVERT_TOL: f64 = 1e-12;

/// The `u` in `Ran Pi_0` with `Pi_p u = phi_raw`, by the fixed-point iteration
/// `u <- Pi_0 (phi_raw + (1 - Pi_p) u)`. Returns `u` and the iteration count.
pub fn invert_projector(
    phi_raw: &FieldState,
    tangents: &Tangents,
    reference: &Tangents,
) -> Result<(FieldState, usize)> {
    let scale = norm(phi_raw, Space::L2)?.max(f64::MIN_POSITIVE);
    let mut u = project(phi_raw, reference)?;
    for it in 1..=INVERT_MAX_ITER {
        let pu = project(&u, tangents)?;
        let next = project(&phi_raw.add(&u)?.sub(&pu)?, reference)?;
        let change = norm(&next.sub(&u)?, Space::L2)?;
        u = next;
        if change <= INVERT_TOL * scale {
            return Ok((u, it));
        }
    }
    Err(Error::NonConvergence {
        what: "projector inversion",
        iterations: INVERT_MAX_ITER,
        residual: norm(&project(&u, tangents)?.sub(phi_raw)?, Space::L2)? / scale,
    })
}

/// `Phi = e^{-q JA} psi - eta_p` and its orthogonality values.
pub fn residuals(
    psi: &FieldState,
    coords: &SolitonCoordinates,
    tangents: &Tangents,
) -> Result<[f64; 8]> {
    let phi = apply_symmetry_inverse(psi, &coords.q).sub(&tangents.frame.eta)?;
    tangents.constraints(&phi)
}

/// Convenience form that builds the tangent data at `coords.p`.
pub fn residuals_at(
    psi: &FieldState,
    coords: &SolitonCoordinates,
    manifold: &SolitonManifold,
) -> Result<[f64; 8]> {
    let t = Tangents::new(&coords.p, manifold, psi.grid())?;
    residuals(psi, coords, &t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guess {
    pub coords: SolitonCoordinates,
    /// Overlap `|int psi conj(eta)| / (|psi| |eta|)` with the guessed soliton.
    pub overlap: f64,
    pub low_confidence: bool,
}

/// Wrap `angle` onto the branch closest to `reference`.
pub fn unwrap_angle(angle: f64, reference: f64) -> f64 {
    angle + 2.0 * PI * ((reference - angle) / (2.0 * PI)).round()
}

/// Starting point for [`extract`]: circular `|psi|^2` centroid, momenta, and the
/// phase of the overlap with the guessed soliton.
pub fn initial_guess(
    psi: &FieldState,
    manifold: &SolitonManifold,
    previous: Option<&SolitonCoordinates>,
) -> Result<Guess> {
    let g = psi.grid().clone();
    let mom = momenta(psi);
    let m = manifold.mass;
    if !(mom[3] > 1e-8 * 2.0 * m) {
        return Err(Error::MassTooSmall { mass: mom[3] });
    }
    let mut q = [0.0; 4];
    let mut sums = [Complex64::default(); 3];
    for (i, v) in psi.values().iter().enumerate() {
        let x = g.point(i);
        let w = v.norm_sqr();
        for a in 0..g.dim() {
            sums[a] += Complex64::from_polar(w, 2.0 * PI * x[a] / g.length());
        }
    }
    for a in 0..g.dim() {
        q[a] = sums[a].arg() * g.length() / (2.0 * PI);
    }
    let mut p = [0.0; 4];
    p[..g.dim()].copy_from_slice(&mom[..g.dim()]);
    p[3] = mom[3] - 2.0 * m;
    let mut low = (p[3] / (2.0 * m)).abs() > 0.5;
    let (lo, hi) = manifold.curve.mass_range();
    let m_eff = (m + 0.5 * p[3]).clamp(lo * (1.0 + 1e-9), hi * (1.0 - 1e-9));
    if m_eff != m + 0.5 * p[3] {
        low = true;
        p[3] = 2.0 * (m_eff - m);
    }
    let eta = crate::groundstate::build_soliton(&SolitonParameters { p, q }, manifold, &g)?;
    let z = pairing(psi, &eta)?;
    let overlap = z.norm() / (mom[3] * crate::field::l2_norm_sq(&eta)).sqrt();
    q[3] = -z.arg();
    if let Some(prev) = previous {
        q[3] = unwrap_angle(q[3], prev.q[3]);
    }
    Ok(Guess {
        coords: SolitonCoordinates { p, q },
        overlap,
        low_confidence: low || overlap < 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Leaves-chart threshold as a fraction of `|eta_p|_{H1}`.
    pub chart_fraction: f64,
    /// Finite-difference step in `p`.
    pub p_step: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            chart_fraction: 0.5,
            p_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub coords: SolitonCoordinates,
    /// The chart variable, in `Ran Pi_0`.
    pub phi: FieldState,
    /// `Pi_p phi = e^{-q JA} psi - eta_p`, the remainder seen in the field.
    pub remainder: FieldState,
    pub residuals: [f64; 8],
    pub phi_h1: f64,
    pub phi_l2: f64,
    pub iterations: usize,
    pub invert_iterations: usize,
}

impl Decomposition {
    pub fn residual_max(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Gauge angle in the `e^{i alpha}` convention, `alpha = -q^4`.
    pub fn alpha(&self) -> f64 {
        -self.coords.q[3]
    }
}

/// `e^{q JA} (eta_p + Pi_p phi)`.
pub fn reconstruct(
    coords: &SolitonCoordinates,
    phi: &FieldState,
    tangents: &Tangents,
) -> Result<FieldState> {
    let v = tangents.frame.eta.add(&project(phi, tangents)?)?;
    Ok(apply_symmetry(&v, &coords.q))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

struct NewtonState {
    coords: SolitonCoordinates,
    tangents: Tangents,
    res: [f64; 8],
    norm: f64,
}

fn evaluate(
    psi: &FieldState,
    coords: SolitonCoordinates,
    manifold: &SolitonManifold,
) -> Result<NewtonState> {
    let tangents = Tangents::new(&coords.p, manifold, psi.grid())?;
    let res = residuals(psi, &coords, &tangents)?;
    Ok(NewtonState {
        coords,
        norm: max_abs(&res),
        tangents,
        res,
    })
}

/// Slot layout shared by the Newton unknowns and equations.
fn slots(active: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = active.to_vec();
    v.extend(active.iter().map(|j| 4 + j));
    v
}

/// Newton Jacobian of the residuals with respect to `(p_active, q_active)`.
/// `q`-derivatives are exact (`d_j` of the pulled-back field and `i` times it);
/// `p`-derivatives are centered differences.
pub fn jacobian(
    psi: &FieldState,
    st_coords: &SolitonCoordinates,
    manifold: &SolitonManifold,
    opts: &ExtractOptions,
) -> Result<Mat<f64>> {
    let g = psi.grid();
    let active = active_indices(g.dim());
    let rows = slots(&active);
    let k = active.len();
    let mut jac = Mat::zeros(2 * k, 2 * k);
    let center = Tangents::new(&st_coords.p, manifold, g)?;
    for (c, &j) in active.iter().enumerate() {
        let h = opts.p_step;
        let mut plus = *st_coords;
        plus.p[j] += h;
        let mut minus = *st_coords;
        minus.p[j] -= h;
        let rp = residuals_at(psi, &plus, manifold)?;
        let rm = residuals_at(psi, &minus, manifold)?;
        for (r, &slot) in rows.iter().enumerate() {
            jac[(r, c)] = (rp[slot] - rm[slot]) / (2.0 * h);
        }
    }
    let pulled = apply_symmetry_inverse(psi, &st_coords.q);
    let grads = gradient(&pulled);
    for (c, &j) in active.iter().enumerate() {
        let dq = if j < 3 {
            grads[j].clone()
        } else {
            pulled.times_i()
        };
        let d = center.constraints(&dq)?;
        for (r, &slot) in rows.iter().enumerate() {
            jac[(r, k + c)] = d[slot];
        }
    }
    Ok(jac)
}

/// Newton solve of the orthogonality conditions from `guess`.
pub fn extract(
    psi: &FieldState,
    guess: &SolitonCoordinates,
    manifold: &SolitonManifold,
    opts: &ExtractOptions,
) -> Result<Decomposition> {
    let g = psi.grid().clone();
    let active = active_indices(g.dim());
    let rows = slots(&active);
    let k = active.len();
    let mut st = evaluate(psi, *guess, manifold)?;
    let mut increases = 0;
    let mut iterations = 0;
    while st.norm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                what: "soliton extraction",
                iterations,
                residual: st.norm,
            });
        }
        iterations += 1;
        let jac = jacobian(psi, &st.coords, manifold, opts)?;
        let rhs = Col::from_fn(2 * k, |r| -st.res[rows[r]]);
        let delta = jac.partial_piv_lu().solve(&rhs);
        if (0..2 * k).any(|i| !delta[i].is_finite()) {
            return Err(Error::NewtonDivergence {
                iteration: iterations,
                residual: st.norm,
            });
        }
        let mut scale = 1.0;
        let mut best: Option<NewtonState> = None;
        for _ in 0..=5 {
            let mut c = st.coords;
            for (s, &j) in active.iter().enumerate() {
                c.p[j] += scale * delta[s];
                c.q[j] += scale * delta[k + s];
            }
            match evaluate(psi, c, manifold) {
                Ok(trial) => {
                    let better = trial.norm < st.norm;
                    best = Some(trial);
                    if better {
                        break;
                    }
                }
                Err(Error::OutOfRange { .. }) | Err(Error::WrapAround { .. }) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
        }
        let Some(trial) = best else {
            return Err(Error::NewtonDivergence {
                iteration: iterations,
                residual: st.norm,
            });
        };
        if trial.norm >= st.norm {
            increases += 1;
            if increases >= 2 {
                return Err(Error::NewtonDivergence {
                    iteration: iterations,
                    residual: trial.norm,
                });
            }
        } else {
            increases = 0;
        }
        st = trial;
    }

    let remainder = apply_symmetry_inverse(psi, &st.coords.q).sub(&st.tangents.frame.eta)?;
    let phi_h1 = norm(&remainder, Space::H1)?;
    let eta_h1 = norm(&st.tangents.frame.eta, Space::H1)?;
    if phi_h1 > opts.chart_fraction * eta_h1 {
        return Err(Error::LeftChart {
            phi_h1,
            limit: opts.chart_fraction * eta_h1,
        });
    }
    let reference = Tangents::new(&[0.0; 4], manifold, &g)?;
    let (phi, invert_iterations) = invert_projector(&remainder, &st.tangents, &reference)?;
    Ok(Decomposition {
        coords: st.coords,
        phi,
        phi_l2: norm(&remainder, Space::L2)?,
        phi_h1,
        remainder,
        residuals: st.res,
        iterations,
        invert_iterations,
    })
}

/// Guess from the field (warm-started phase when `previous` is given), then Newton.
pub fn extract_auto(
    psi: &FieldState,
    manifold: &SolitonManifold,
    previous: Option<&SolitonCoordinates>,
    opts: &ExtractOptions,
) -> Result<Decomposition> {
    let start = match previous {
        Some(prev) => *prev,
        None => initial_guess(psi, manifold, None)?.coords,
    };
    match extract(psi, &start, manifold, opts) {
        Ok(d) => Ok(d),
        Err(e) if previous.is_some() => {
            // the warm start may be stale; fall back to a fresh guess
            let fresh = initial_guess(psi, manifold, previous)?.coords;
            extract(psi, &fresh, manifold, opts).map_err(|_| e)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::l2_norm_sq;
    use crate::groundstate::{build_soliton, mass_curve, GroundStateFamily};
    use crate::model::Nonlinearity;

    fn manifold() -> SolitonManifold {
        let fam = Arc::new(GroundStateFamily::new(Nonlinearity::cubic(), 1).unwrap());
        let c = Arc::new(mass_curve(fam, 0.25, 4.0, 9).unwrap());
        SolitonManifold::new(c, 1.0).unwrap()
    }

    fn grid() -> Arc<Grid> {
        Grid::new(1, 1024, 40.0 * PI).unwrap()
    }

    fn noise(g: &Arc<Grid>, seed: u64, center: f64) -> FieldState {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let coef: Vec<(f64, f64, f64)> = (0..12).map(|_| (next(), next(), next())).collect();
        FieldState::from_fn(g, |x| {
            let y = x[0] - center;
            let env = (-y * y / 8.0).exp();
            let mut v = Complex64::default();
            for (n, (a, b, ph)) in coef.iter().enumerate() {
                v += Complex64::new(*a, *b)
                    * Complex64::from_polar(1.0, 0.3 * n as f64 * y + 6.0 * ph);
            }
            v * env
        })
    }

    #[test]
    fn projector_properties() {
        let man = manifold();
        let g = grid();
        for p in [[0.0; 4], [0.3, 0.0, 0.0, -0.2]] {
            let t = Tangents::new(&p, &man, &g).unwrap();
            let u = noise(&g, 3, 0.5);
            let pu = project(&u, &t).unwrap();
            let c = t.constraints(&pu).unwrap();
            assert!(max_abs(&c) < 1e-12, "{c:?}");
            let ppu = project(&pu, &t).unwrap();
            assert!(l2_norm_sq(&ppu.sub(&pu).unwrap()).sqrt() < 1e-12);
            // tangent vectors are annihilated
            let d1 = project(t.frame.d_eta[0].as_ref().unwrap(), &t).unwrap();
            assert!(l2_norm_sq(&d1).sqrt() < 1e-10);
            assert!(
                inner(t.frame.a_eta[0].as_ref().unwrap(), &d1)
                    .unwrap()
                    .abs()
                    < 1e-8
            );
            assert!(t.gram_condition() < 10.0);
        }
    }

    #[test]
    fn projector_matches_explicit_formula_at_rest() {
        // at p = 0 the normalization is exact up to the tangent accuracy, so the
        // Gram-corrected projector agrees with the explicit sum
        let man = manifold();
        let g = grid();
        let t = Tangents::new(&[0.0; 4], &man, &g).unwrap();
        let u = noise(&g, 5, -1.0);
        let mut explicit = u.clone();
        for &j in &[0usize, 3] {
            let a = t.frame.a_eta[j].as_ref().unwrap();
            let d = t.frame.d_eta[j].as_ref().unwrap();
            let c1 = inner(a, &u).unwrap();
            let c2 = inner(&d.times_i(), &u).unwrap();
            explicit.add_scaled(Complex64::new(-c1, 0.0), d).unwrap();
            explicit
                .add_scaled(Complex64::new(c2, 0.0), &a.scale(-I))
                .unwrap();
        }
        let pu = project(&u, &t).unwrap();
        let diff = l2_norm_sq(&pu.sub(&explicit).unwrap()).sqrt() / l2_norm_sq(&u).sqrt();
        assert!(diff < 1e-6, "diff {diff}");
    }

    #[test]
    fn invert_projector_round_trip() {
        let man = manifold();
        let g = grid();
        let reference = Tangents::new(&[0.0; 4], &man, &g).unwrap();
        let u0 = project(&noise(&g, 9, 0.0), &reference).unwrap();
        let (same, _) = invert_projector(&u0, &reference, &reference).unwrap();
        assert!(l2_norm_sq(&same.sub(&u0).unwrap()).sqrt() < 1e-12);

        let t = Tangents::new(&[0.3, 0.0, 0.0, 0.0], &man, &g).unwrap();
        let phi = project(&noise(&g, 11, 0.0), &t).unwrap();
        let (u, iters) = invert_projector(&phi, &t, &reference).unwrap();
        assert!(iters <= 10, "iterations {iters}");
        let back = project(&u, &t).unwrap();
        let err = l2_norm_sq(&back.sub(&phi).unwrap()).sqrt();
        assert!(err < 1e-11, "err {err}");
        assert!(max_abs(&reference.constraints(&u).unwrap()) < 1e-11);
    }

    #[test]
    fn residuals_vanish_on_the_manifold() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates {
            p: [0.2, 0.0, 0.0, 0.1],
            q: [1.3, 0.0, 0.0, 0.7],
        };
        let psi = build_soliton(&c, &man, &g).unwrap();
        let r = residuals_at(&psi, &c, &man).unwrap();
        assert!(max_abs(&r) < 1e-10, "{r:?}");

        let t = Tangents::new(&c.p, &man, &g).unwrap();
        let pert = project(&noise(&g, 2, 0.0), &t).unwrap().scale_real(1e-2);
        let psi2 = apply_symmetry(&t.frame.eta.add(&pert).unwrap(), &c.q);
        let r2 = residuals(&psi2, &c, &t).unwrap();
        assert!(max_abs(&r2) < 1e-9, "{r2:?}");
    }

    #[test]
    fn residual_linear_response_in_q() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates::default();
        let t = Tangents::new(&c.p, &man, &g).unwrap();
        let delta = 1e-5;
        let shifted = SolitonCoordinates {
            q: [delta, 0.0, 0.0, 0.0],
            ..c
        };
        let psi = build_soliton(&shifted, &man, &g).unwrap();
        let r = residuals(&psi, &c, &t).unwrap();
        // Phi ~ -delta d_1 eta
        let d1eta = gradient(&t.frame.eta)[0].scale_real(-1.0);
        let expect = delta * inner(&t.frame.d_eta[0].as_ref().unwrap().times_i(), &d1eta).unwrap();
        assert!(
            (r[4] - expect).abs() < 1e-3 * expect.abs(),
            "{} vs {expect}",
            r[4]
        );
    }

    #[test]
    fn initial_guess_examples() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates {
            p: [0.0; 4],
            q: [3.7, 0.0, 0.0, 0.4],
        };
        let psi = build_soliton(&c, &man, &g).unwrap();
        let guess = initial_guess(&psi, &man, None).unwrap();
        let h = g.spacing();
        assert!(
            (guess.coords.q[0] - 3.7).abs() < h * h,
            "{:?}",
            guess.coords
        );
        for i in 0..4 {
            assert!((guess.coords.p[i] - c.p[i]).abs() < 1e-6);
        }
        assert!((guess.coords.q[3] - 0.4).abs() < 1e-6);
        assert!(!guess.low_confidence);

        let rad = noise(&g, 1, 20.0).scale_real(0.05);
        let gr = initial_guess(&rad, &man, None).unwrap();
        assert!(gr.low_confidence);
        assert!(matches!(
            initial_guess(&FieldState::zeros(&g), &man, None),
            Err(Error::MassTooSmall { .. })
        ));
    }

    #[test]
    fn unwrapping() {
        assert!((unwrap_angle(-3.0, 3.1) - (2.0 * PI - 3.0)).abs() < 1e-15);
        assert_eq!(unwrap_angle(0.5, 0.4), 0.5);
        assert!((unwrap_angle(0.1, 100.0) - (0.1 + 32.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn extract_exact_chart_point() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates {
            p: [0.2, 0.0, 0.0, 0.1],
            q: [1.3, 0.0, 0.0, 0.7],
        };
        let psi = build_soliton(&c, &man, &g).unwrap();
        let d = extract_auto(&psi, &man, None, &ExtractOptions::default()).unwrap();
        for i in 0..4 {
            assert!((d.coords.p[i] - c.p[i]).abs() < 1e-9, "{:?}", d.coords);
            assert!((d.coords.q[i] - c.q[i]).abs() < 1e-9, "{:?}", d.coords);
        }
        assert!(d.phi_h1 < 1e-9);
    }

    #[test]
    fn extract_with_noise_and_reconstruct() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates {
            p: [-0.1, 0.0, 0.0, 0.05],
            q: [-2.0, 0.0, 0.0, 1.0],
        };
        let t = Tangents::new(&c.p, &man, &g).unwrap();
        let mut n = project(&noise(&g, 4, 0.0), &t).unwrap();
        n = n.scale_real(1e-3 / norm(&n, Space::H1).unwrap());
        let psi = apply_symmetry(&t.frame.eta.add(&n).unwrap(), &c.q);
        let d = extract_auto(&psi, &man, None, &ExtractOptions::default()).unwrap();
        for i in 0..4 {
            assert!((d.coords.p[i] - c.p[i]).abs() < 1e-9, "{:?}", d.coords);
            assert!((d.coords.q[i] - c.q[i]).abs() < 1e-9, "{:?}", d.coords);
        }
        assert!((d.phi_h1 - 1e-3).abs() < 1e-9);
        assert!(d.residual_max() <= 1e-10);
        let t2 = Tangents::new(&d.coords.p, &man, &g).unwrap();
        let rebuilt = reconstruct(&d.coords, &d.phi, &t2).unwrap();
        assert!(l2_norm_sq(&rebuilt.sub(&psi).unwrap()).sqrt() < 1e-10);
    }

    #[test]
    fn extract_unstructured_noise_tracks_least_squares_oracle() {
        // noise not aligned with the chart moves the coordinates by O(noise).
        // A direct minimization of |psi - soliton(p, q)|_{L2} is a different
        // chart, so the two agree only to that order.
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates::default();
        let mut n = noise(&g, 8, 0.0);
        n = n.scale_real(1e-3 / norm(&n, Space::H1).unwrap());
        let psi = build_soliton(&c, &man, &g).unwrap().add(&n).unwrap();
        let d = extract_auto(&psi, &man, None, &ExtractOptions::default()).unwrap();
        // Gauss-Newton oracle for the L2 fit over (p1, p4, q1, q4)
        let mut x = [0.0f64; 4];
        let field_at = |x: &[f64; 4]| {
            build_soliton(
                &SolitonCoordinates {
                    p: [x[0], 0.0, 0.0, x[1]],
                    q: [x[2], 0.0, 0.0, x[3]],
                },
                &man,
                &g,
            )
            .unwrap()
        };
        for _ in 0..8 {
            let base = field_at(&x).sub(&psi).unwrap();
            let mut cols = Vec::new();
            for k in 0..4 {
                let mut xp = x;
                xp[k] += 1e-6;
                let mut xm = x;
                xm[k] -= 1e-6;
                cols.push(field_at(&xp).sub(&field_at(&xm)).unwrap().scale_real(0.5e6));
            }
            let a = Mat::from_fn(4, 4, |i, j| inner(&cols[i], &cols[j]).unwrap());
            let b = Col::from_fn(4, |i| -inner(&cols[i], &base).unwrap());
            let s = a.partial_piv_lu().solve(&b);
            for k in 0..4 {
                x[k] += s[k];
            }
        }
        let got = [d.coords.p[0], d.coords.p[3], d.coords.q[0], d.coords.q[3]];
        for k in 0..4 {
            assert!((got[k] - x[k]).abs() < 1e-3, "{got:?} vs {x:?}");
            assert!(got[k].abs() < 1e-2);
            assert!(x[k].abs() < 1e-2);
        }
        assert!((d.phi_h1 - 1e-3).abs() < 5e-4);
    }

    #[test]
    fn extraction_is_equivariant() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates {
            p: [0.15, 0.0, 0.0, -0.1],
            q: [0.5, 0.0, 0.0, 0.2],
        };
        let t = Tangents::new(&c.p, &man, &g).unwrap();
        let mut n = project(&noise(&g, 6, 0.0), &t).unwrap();
        n = n.scale_real(1e-2 / norm(&n, Space::H1).unwrap());
        let psi = apply_symmetry(&t.frame.eta.add(&n).unwrap(), &c.q);
        let d0 = extract_auto(&psi, &man, None, &ExtractOptions::default()).unwrap();
        let s = [2.25, 0.0, 0.0, 1.1];
        let d1 = extract_auto(
            &apply_symmetry(&psi, &s),
            &man,
            None,
            &ExtractOptions::default(),
        )
        .unwrap();
        for i in 0..4 {
            assert!((d1.coords.p[i] - d0.coords.p[i]).abs() < 1e-9);
        }
        assert!((d1.coords.q[0] - d0.coords.q[0] - s[0]).abs() < 1e-9);
        let dq4 = d1.coords.q[3] - d0.coords.q[3] - s[3];
        assert!((dq4 - 2.0 * PI * (dq4 / (2.0 * PI)).round()).abs() < 1e-9);
        assert!(l2_norm_sq(&d1.phi.sub(&d0.phi).unwrap()).sqrt() < 1e-9);
    }

    #[test]
    fn jacobian_block_structure() {
        let man = manifold();
        let g = grid();
        let c = SolitonCoordinates::default();
        let psi = build_soliton(&c, &man, &g).unwrap();
        let j = jacobian(&psi, &c, &man, &ExtractOptions::default()).unwrap();
        // unknowns (p1, p4, q1, q4); equations (<A_1 eta>, <A_4 eta>, <E d_1 eta>, <E d_4 eta>)
        for r in 0..4 {
            for k in 0..4 {
                let expect = match (r, k) {
                    (0, 0) | (1, 1) | (2, 2) => -1.0,
                    (3, 3) => 1.0,
                    _ => 0.0,
                };
                assert!(
                    (j[(r, k)] - expect).abs() < 1e-5,
                    "J[{r},{k}] = {}",
                    j[(r, k)]
                );
            }
        }
    }

    #[test]
    fn leaving_the_chart_is_reported() {
        let man = manifold();
        let g = grid();
        let psi = build_soliton(&SolitonCoordinates::default(), &man, &g).unwrap();
        let t = Tangents::new(&[0.0; 4], &man, &g).unwrap();
        let mut n = project(&noise(&g, 12, 0.0), &t).unwrap();
        n = n.scale_real(2.0 / norm(&n, Space::H1).unwrap());
        let big = psi.add(&n).unwrap();
        let r = extract(
            &big,
            &SolitonCoordinates::default(),
            &man,
            &ExtractOptions::default(),
        );
        assert!(r.is_err());
    }
}

//! Complex fields on a periodic grid and the operations of the Hamiltonian
//! structure: the real bracket `<a, b> = 2 Re int a conj(b)`, momenta, the
//! symmetry group and the generators `A_j`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A complex field sampled on a periodic grid, row-major.
#[derive(Debug, Clone)]
pub struct FieldState {
    grid: Arc<Grid>,
    values: Vec<Complex64>,
}

impl PartialEq for FieldState {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl FieldState {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Sample `f` at every node.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn check(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Forward transform (unnormalized).
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut s = self.values.clone();
        self.grid.fft_forward(&mut s);
        s
    }

    pub fn from_spectrum(grid: &Arc<Grid>, mut spectrum: Vec<Complex64>) -> Self {
        grid.fft_inverse(&mut spectrum);
        Self {
            grid: grid.clone(),
            values: spectrum,
        }
    }

    /// Apply a spectral multiplier `m(k)` given per flat bin.
    pub fn map_spectrum(&self, mut f: impl FnMut(usize, Complex64) -> Complex64) -> Self {
        let mut s = self.spectrum();
        for (i, v) in s.iter_mut().enumerate() {
            *v = f(i, *v);
        }
        Self::from_spectrum(&self.grid, s)
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    pub fn scale_real(&self, a: f64) -> Self {
        self.scale(Complex64::new(a, 0.0))
    }

    /// `self + a * other`
    pub fn axpy(&self, a: Complex64, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    /// In-place `self += a * other`.
    pub fn add_scaled(&mut self, a: Complex64, other: &Self) -> Result<()> {
        self.check(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    /// Multiply by `i`, the symplectic operator `E`.
    pub fn times_i(&self) -> Self {
        self.scale(I)
    }

    /// Pointwise multiplication by a real function of position.
    pub fn mul_fn(&self, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let g = &self.grid;
        Self {
            grid: g.clone(),
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v * f(g.point(i)))
                .collect(),
        }
    }
}

/// Complex pairing `int a conj(b)`.
pub fn pairing(a: &FieldState, b: &FieldState) -> Result<Complex64> {
    a.check(b)?;
    let s: Complex64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y.conj())
        .sum();
    Ok(s * a.grid.cell_volume())
}

/// The real scalar product `2 Re int a conj(b)` (note the factor 2).
pub fn inner(a: &FieldState, b: &FieldState) -> Result<f64> {
    a.check(b)?;
    let s: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum();
    Ok(2.0 * s * a.grid.cell_volume())
}

/// Symplectic form `omega(a, b) = <E a, b>` with `E = i`.
pub fn omega(a: &FieldState, b: &FieldState) -> Result<f64> {
    a.check(b)?;
    // Re(i a conj b) = -(a.im b.re - a.re b.im)
    let s: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.re * y.im - x.im * y.re)
        .sum();
    Ok(2.0 * s * a.grid.cell_volume())
}

/// Function spaces understood by [`norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    L2,
    H1,
    /// `|| <x>^k (1 - Laplacian)^{s/2} psi ||_{L2}`
    Weighted {
        s: f64,
        k: f64,
    },
    /// `||psi||_{L^s} + ||grad psi||_{L^s}`; `s = inf` allowed.
    W1 {
        s: f64,
    },
}

/// Squared `L2` norm `int |psi|^2` (no factor 2).
pub fn l2_norm_sq(psi: &FieldState) -> f64 {
    psi.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * psi.grid.cell_volume()
}

/// `int |psi|^2` evaluated through Plancherel.
pub fn l2_norm_sq_spectral(psi: &FieldState) -> f64 {
    let g = &psi.grid;
    psi.spectrum().iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_volume() / g.len() as f64
}

fn lebesgue(values: impl Iterator<Item = f64>, s: f64, cell: f64) -> f64 {
    if s.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        (values.map(|a| a.powf(s)).sum::<f64>() * cell).powf(1.0 / s)
    }
}

/// Spectral gradient components (Nyquist bin zeroed).
pub fn gradient(psi: &FieldState) -> Vec<FieldState> {
    let g = psi.grid.clone();
    let spec = psi.spectrum();
    (0..g.dim())
        .map(|a| {
            let k = g.k_axis_odd(a);
            let s: Vec<Complex64> = spec.iter().zip(&k).map(|(v, &kk)| v * I * kk).collect();
            FieldState::from_spectrum(&g, s)
        })
        .collect()
}

pub fn norm(psi: &FieldState, space: Space) -> Result<f64> {
    let g = psi.grid.clone();
    match space {
        Space::L2 => Ok(l2_norm_sq(psi).sqrt()),
        Space::H1 => {
            let ksq = g.k_squared();
            let s: f64 = psi
                .spectrum()
                .iter()
                .zip(&ksq)
                .map(|(v, k2)| (1.0 + k2) * v.norm_sqr())
                .sum();
            Ok((s * g.cell_volume() / g.len() as f64).sqrt())
        }
        Space::Weighted { s, k } => {
            if !s.is_finite() || !k.is_finite() {
                return Err(Error::Domain(format!(
                    "unsupported exponents s = {s}, k = {k}"
                )));
            }
            let ksq = g.k_squared();
            let smooth = psi.map_spectrum(|i, v| v * (1.0 + ksq[i]).powf(0.5 * s));
            let weighted =
                smooth.mul_fn(|x| (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).powf(0.5 * k));
            Ok(l2_norm_sq(&weighted).sqrt())
        }
        Space::W1 { s } => {
            if !(s >= 1.0) {
                return Err(Error::Domain(format!("unsupported Lebesgue exponent {s}")));
            }
            let cell = g.cell_volume();
            let base = lebesgue(psi.values.iter().map(|v| v.norm()), s, cell);
            let grads = gradient(psi);
            let mag = (0..g.len()).map(|i| {
                grads
                    .iter()
                    .map(|d| d.values[i].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            });
            Ok(base + lebesgue(mag, s, cell))
        }
    }
}

/// Conserved momenta `P_j = int conj(psi) i d_j psi` (j = 1..3) and the mass
/// `P_4 = int |psi|^2`. Components beyond the grid dimension are 0.
pub fn momenta(psi: &FieldState) -> [f64; 4] {
    let g = &psi.grid;
    let spec = psi.spectrum();
    let norm = g.cell_volume() / g.len() as f64;
    let mut p = [0.0; 4];
    for a in 0..g.dim() {
        let k = g.k_axis_odd(a);
        p[a] = -spec
            .iter()
            .zip(&k)
            .map(|(v, kk)| kk * v.norm_sqr())
            .sum::<f64>()
            * norm;
    }
    p[3] = l2_norm_sq(psi);
    p
}

/// The symmetry `e^{q^j J A_j} psi = e^{-i q^4} psi(x - q)`; translation by a
/// spectral phase shift, exact for band-limited fields.
pub fn apply_symmetry(psi: &FieldState, q: &[f64; 4]) -> FieldState {
    let g = psi.grid.clone();
    let gauge = Complex64::from_polar(1.0, -q[3]);
    if q[..g.dim()].iter().all(|&v| v == 0.0) {
        return psi.scale(gauge);
    }
    psi.map_spectrum(|i, v| {
        let k = g.wavevector(i);
        let phase = k[0] * q[0] + k[1] * q[1] + k[2] * q[2];
        v * Complex64::from_polar(1.0, -phase) * gauge
    })
}

/// Inverse of [`apply_symmetry`].
pub fn apply_symmetry_inverse(psi: &FieldState, q: &[f64; 4]) -> FieldState {
    apply_symmetry(psi, &[-q[0], -q[1], -q[2], -q[3]])
}

/// Generators `A_j = i d_j` for `j = 1..3` and `A_4 = 1` (`j` is 1-based).
/// Axes beyond the grid dimension give the zero field.
pub fn apply_a(psi: &FieldState, j: usize) -> Result<FieldState> {
    let g = psi.grid.clone();
    match j {
        4 => Ok(psi.clone()),
        1..=3 if j <= g.dim() => {
            let k = g.k_axis_odd(j - 1);
            Ok(psi.map_spectrum(|i, v| -v * k[i]))
        }
        1..=3 => Ok(FieldState::zeros(&g)),
        _ => Err(Error::Domain(format!("generator index {j} not in 1..=4"))),
    }
}

/// `J A_j psi = -i A_j psi`: `d_j psi` for spatial `j`, `-i psi` for the gauge.
pub fn apply_ja(psi: &FieldState, j: usize) -> Result<FieldState> {
    Ok(apply_a(psi, j)?.scale(-I))
}

/// Fraction of `int |psi|^2` carried by nodes within `layers` points of any box edge.
pub fn boundary_mass_fraction(psi: &FieldState, layers: usize) -> f64 {
    let g = &psi.grid;
    let n = g.n();
    let total: f64 = psi.values.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let edge: f64 = psi
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let ijk = g.unflatten(*i);
            (0..g.dim()).any(|a| ijk[a] < layers || ijk[a] >= n - layers)
        })
        .map(|(_, v)| v.norm_sqr())
        .sum();
    edge / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    fn line(n: usize, l: f64) -> Arc<Grid> {
        Grid::new(1, n, l).unwrap()
    }

    fn random_field(g: &Arc<Grid>, seed: u64) -> FieldState {
        // smooth localized random field
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let coeffs: Vec<(f64, f64, f64)> = (0..6).map(|_| (next(), next(), 3.0 * next())).collect();
        FieldState::from_fn(g, |x| {
            let env = (-x[0] * x[0] / 8.0).exp();
            coeffs
                .iter()
                .map(|&(a, b, k)| Complex64::new(a, b) * Complex64::from_polar(1.0, k * x[0]))
                .sum::<Complex64>()
                * env
        })
    }

    #[test]
    fn inner_identities() {
        let g = line(256, 40.0);
        let psi = random_field(&g, 3);
        assert_relative_eq!(
            inner(&psi, &psi).unwrap(),
            2.0 * l2_norm_sq(&psi),
            max_relative = 1e-14
        );
        assert!(inner(&psi, &psi.times_i()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = FieldState::zeros(&line(64, 10.0));
        let b = FieldState::zeros(&line(128, 10.0));
        assert!(matches!(inner(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn norms_of_reference_fields() {
        let g = line(512, 40.0 * PI);
        let zero = FieldState::zeros(&g);
        for sp in [
            Space::L2,
            Space::H1,
            Space::Weighted { s: 1.5, k: 2.0 },
            Space::W1 { s: 6.0 },
        ] {
            assert_eq!(norm(&zero, sp).unwrap(), 0.0);
        }
        let k = 3.0 * 2.0 * PI / g.length();
        let wave = FieldState::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let h1 = norm(&wave, Space::H1).unwrap();
        assert_relative_eq!(h1 * h1, g.length() * (1.0 + k * k), max_relative = 1e-12);
        let s = FieldState::from_fn(&g, |x| Complex64::new(sech(x[0]), 0.0));
        assert_relative_eq!(
            norm(&s, Space::L2).unwrap().powi(2),
            2.0,
            max_relative = 1e-12
        );
        assert!(norm(&s, Space::W1 { s: 0.5 }).is_err());
    }

    #[test]
    fn w1_infinity_norm_of_sech() {
        let g = line(1024, 40.0 * PI);
        let s = FieldState::from_fn(&g, |x| Complex64::new(sech(x[0]), 0.0));
        // max sech = 1 at the node x = 0; max |sech'| = 1/2 at asinh(1)
        let w = norm(&s, Space::W1 { s: f64::INFINITY }).unwrap();
        assert!((w - 1.5).abs() < 1e-3);
    }

    #[test]
    fn parseval() {
        let g = Grid::new(3, 16, 12.0).unwrap();
        let psi = FieldState::from_fn(&g, |x| {
            Complex64::new(
                (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2]) / 2.0).exp(),
                0.3 * x[2],
            )
        });
        assert_relative_eq!(
            l2_norm_sq(&psi),
            l2_norm_sq_spectral(&psi),
            max_relative = 1e-12
        );
    }

    #[test]
    fn momenta_examples() {
        let g = line(1024, 40.0 * PI);
        let b = FieldState::from_fn(&g, |x| Complex64::new(sech(x[0]), 0.0));
        let p = momenta(&b);
        assert!(p[0].abs() < 1e-13);
        assert_relative_eq!(p[3], 2.0, max_relative = 1e-12);
        // boosted: phase e^{-i v x / 2}, mass m = 1 so P1 = m v
        let v = 0.4;
        let boosted =
            FieldState::from_fn(&g, |x| Complex64::from_polar(sech(x[0]), -v * x[0] / 2.0));
        let pb = momenta(&boosted);
        assert_relative_eq!(pb[0], 1.0 * v, max_relative = 1e-10);
        let rotated = boosted.scale(Complex64::from_polar(1.0, 0.83));
        let pr = momenta(&rotated);
        for j in 0..4 {
            assert!((pr[j] - pb[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn momenta_match_physical_space_pairing() {
        let g = line(512, 40.0);
        let psi = random_field(&g, 11);
        let p = momenta(&psi);
        let a1 = apply_a(&psi, 1).unwrap();
        let z = pairing(&a1, &psi).unwrap(); // int (i psi') conj(psi)
                                             // P_1 = int conj(psi) i psi' is real; imaginary residue is roundoff
        assert!(z.im.abs() < 1e-13 * l2_norm_sq(&psi));
        assert_relative_eq!(z.re, p[0], max_relative = 1e-12);
        // <psi, A_1 psi> = 2 P_1
        assert_relative_eq!(inner(&psi, &a1).unwrap(), 2.0 * p[0], max_relative = 1e-12);
    }

    #[test]
    fn apply_a_examples() {
        let g = line(128, 2.0 * PI);
        let psi = random_field(&g, 5);
        assert_eq!(apply_a(&psi, 4).unwrap(), psi);
        let k = 5.0;
        let wave = FieldState::from_fn(&g, |x| Complex64::from_polar(1.0, k * x[0]));
        let a = apply_a(&wave, 1).unwrap();
        for (u, w) in a.values().iter().zip(wave.values()) {
            assert!((u + k * w).norm() < 1e-12);
        }
        assert!(apply_a(&psi, 5).is_err());
    }

    #[test]
    fn symmetry_identity_and_translation() {
        let g = line(256, 40.0);
        let psi = random_field(&g, 7);
        let same = apply_symmetry(&psi, &[0.0; 4]);
        for (a, b) in same.values().iter().zip(psi.values()) {
            assert!((a - b).norm() < 1e-15);
        }
        // shift by a whole number of cells is an exact index shift
        let h = g.spacing();
        let shifted = apply_symmetry(&psi, &[3.0 * h, 0.0, 0.0, 0.0]);
        for i in 3..g.n() {
            assert!((shifted.values()[i] - psi.values()[i - 3]).norm() < 1e-12);
        }
        let gauge = apply_symmetry(&psi, &[0.0, 0.0, 0.0, PI]);
        for (a, b) in gauge.values().iter().zip(psi.values()) {
            assert!((a + b).norm() < 1e-14);
        }
    }

    #[test]
    fn boundary_mass() {
        let g = line(100, 10.0);
        let mut psi = FieldState::zeros(&g);
        psi.values_mut()[0] = Complex64::new(1.0, 0.0);
        psi.values_mut()[50] = Complex64::new(1.0, 0.0);
        assert_relative_eq!(boundary_mass_fraction(&psi, 5), 0.5);
    }

    proptest! {
        #[test]
        fn symmetry_group_property(a in -5.0f64..5.0, b in -5.0f64..5.0, t in -4.0f64..4.0, s in -4.0f64..4.0, seed in 0u64..1000) {
            let g = line(256, 40.0);
            let psi = random_field(&g, seed);
            let q1 = [a, 0.0, 0.0, t];
            let q2 = [b, 0.0, 0.0, s];
            let two = apply_symmetry(&apply_symmetry(&psi, &q1), &q2);
            let one = apply_symmetry(&psi, &[a + b, 0.0, 0.0, t + s]);
            for (u, v) in two.values().iter().zip(one.values()) {
                prop_assert!((u - v).norm() < 1e-12);
            }
            let p0 = momenta(&psi);
            let p1 = momenta(&one);
            for j in 0..4 {
                prop_assert!((p0[j] - p1[j]).abs() < 1e-12 * (1.0 + p0[3]));
            }
        }

        #[test]
        fn omega_is_antisymmetric(s1 in 0u64..500, s2 in 500u64..1000) {
            let g = line(128, 30.0);
            let a = random_field(&g, s1);
            let b = random_field(&g, s2);
            let w = omega(&a, &b).unwrap() + omega(&b, &a).unwrap();
            prop_assert!(w.abs() < 1e-14);
            // omega(a, b) = <i a, b>
            prop_assert!((omega(&a, &b).unwrap() - inner(&a.times_i(), &b).unwrap()).abs() < 1e-13);
        }
    }
}

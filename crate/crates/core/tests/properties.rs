use std::f64::consts::PI;
use std::sync::Arc;

use nlsv_core::evolve::{hamiltonian, Stepper};
use nlsv_core::field::{apply_symmetry, l2_norm_sq};
use nlsv_core::groundstate::{build_soliton, mass_curve, GroundStateFamily, SolitonManifold};
use nlsv_core::mech::{mech_energy, EffectivePotential, Leapfrog, MechState};
use nlsv_core::model::{Nonlinearity, Potential};
use nlsv_core::modulation::{extract_auto, ExtractOptions, SolitonCoordinates};
use nlsv_core::{Complex64, FieldState, Grid};
use proptest::prelude::*;

/// Smooth localized field with a few random Fourier components.
fn bump(g: &Arc<Grid>, c: [f64; 6]) -> FieldState {
    FieldState::from_fn(g, |x| {
        let env = (-x[0] * x[0] / 6.0).exp();
        Complex64::new(
            c[0] + c[1] * (c[2] * x[0]).cos(),
            c[3] * (c[4] * x[0] + c[5]).sin(),
        ) * env
    })
}

fn coeffs() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-1.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_step_conserves_mass(c in coeffs(), eps in 0.0f64..0.05) {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let psi0 = bump(&g, c);
        let v = Potential::gaussian(-1.0, [1.0, 0.0, 0.0], 2.0);
        let stepper = Stepper::new(&g, Nonlinearity::cubic(), &v, eps, 1e-3);
        let mut psi = psi0.clone();
        stepper.advance(&mut psi, 200).unwrap();
        let m0 = l2_norm_sq(&psi0);
        prop_assert!((l2_norm_sq(&psi) - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn free_evolution_commutes_with_symmetries(c in coeffs(), a in -3.0f64..3.0, th in -PI..PI) {
        let g = Grid::new(1, 256, 40.0).unwrap();
        let psi0 = bump(&g, c);
        let q = [a, 0.0, 0.0, th];
        let stepper = Stepper::new(&g, Nonlinearity::cubic(), &Potential::zero(), 0.0, 1e-3);
        let mut x = apply_symmetry(&psi0, &q);
        stepper.advance(&mut x, 50).unwrap();
        let mut y = psi0.clone();
        stepper.advance(&mut y, 50).unwrap();
        let y = apply_symmetry(&y, &q);
        let err = x.values().iter().zip(y.values()).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-11, "{}", err);
        let h = hamiltonian(&psi0, &Nonlinearity::cubic(), &Potential::zero(), 0.0);
        let hq = hamiltonian(&apply_symmetry(&psi0, &q), &Nonlinearity::cubic(), &Potential::zero(), 0.0);
        prop_assert!((h - hq).abs() < 1e-11 * (1.0 + h.abs()));
    }

    #[test]
    fn cubic_mass_law(e in 0.3f64..3.0) {
        // m(E) = sqrt(E) for b = sqrt(E) sech(sqrt(E) x)
        let fam = GroundStateFamily::new(Nonlinearity::cubic(), 1).unwrap();
        let m = fam.mass(e).unwrap();
        prop_assert!((m - e.sqrt()).abs() <= 1e-8 * e.sqrt());
        prop_assert!((fam.mass_slope(e).unwrap() - 0.5 / e.sqrt()).abs() <= 1e-5);
    }
}

fn well() -> (EffectivePotential, f64) {
    let g = Grid::new(1, 1024, 40.0 * PI).unwrap();
    let prof = GroundStateFamily::new(Nonlinearity::cubic(), 1)
        .unwrap()
        .profile(1.0)
        .unwrap();
    let v =
        EffectivePotential::build(&Potential::gaussian(-1.0, [0.0; 3], 2.0), &prof, &g).unwrap();
    (v, prof.mass())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn leapfrog_is_time_reversible(q in -6.0f64..6.0, p in -0.05f64..0.05) {
        let (veff, m) = well();
        let eps = 1e-2;
        let fwd = Leapfrog { veff: &veff, mass: m, eps, dt: 0.05 };
        let bwd = Leapfrog { veff: &veff, mass: m, eps, dt: -0.05 };
        let s0 = MechState::new([p, 0.0, 0.0], [q, 0.0, 0.0]);
        let mut s = s0;
        for _ in 0..2000 {
            s = fwd.step(&s).unwrap();
        }
        let h0 = mech_energy(&s0, m, eps, &veff).unwrap();
        // shadow-energy error of order (dt omega)^2 eps |V_eff| with omega ~ 0.04
        let scale = eps * veff.node_values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!((mech_energy(&s, m, eps, &veff).unwrap() - h0).abs() < 1e-5 * scale);
        for _ in 0..2000 {
            s = bwd.step(&s).unwrap();
        }
        prop_assert!((s.q[0] - q).abs() < 1e-10 && (s.p[0] - p).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn chart_round_trip(p1 in -0.3f64..0.3, p4 in -0.3f64..0.3, q1 in -8.0f64..8.0, q4 in -PI..PI) {
        let fam = Arc::new(GroundStateFamily::new(Nonlinearity::cubic(), 1).unwrap());
        let man = SolitonManifold::new(Arc::new(mass_curve(fam, 0.25, 4.0, 9).unwrap()), 1.0).unwrap();
        let g = Grid::new(1, 1024, 40.0 * PI).unwrap();
        let c = SolitonCoordinates { p: [p1, 0.0, 0.0, p4], q: [q1, 0.0, 0.0, q4] };
        let psi = build_soliton(&c, &man, &g).unwrap();
        let d = extract_auto(&psi, &man, None, &ExtractOptions::default()).unwrap();
        for i in 0..4 {
            prop_assert!((d.coords.p[i] - c.p[i]).abs() < 1e-9);
            prop_assert!((d.coords.q[i] - c.q[i]).abs() < 1e-9);
        }
        prop_assert!(d.phi_h1 < 1e-9);
    }
}

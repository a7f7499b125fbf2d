use nlsv_core::mech::mech_energy;
use nlsv_core::model::{validate_config, PerturbationSpec, Potential, SimulationConfig};
use nlsv_lab::compare::{compare, trajectory_as_orbit};
use nlsv_lab::config::well_scenario;
use nlsv_lab::scenario::{scenario_run, RunRecord};

fn run(c: &SimulationConfig) -> RunRecord {
    scenario_run(&validate_config(c).unwrap()).unwrap()
}

fn free(t_final: f64) -> SimulationConfig {
    let mut c = well_scenario(1e-2);
    c.potential = Potential::zero();
    c.run.epsilon = 0.0;
    c.run.t_final = t_final;
    c.run.extraction_cadence = 500;
    c.run.p0 = [0.4, 0.0, 0.0, 0.0];
    c.run.q0 = [-5.0, 0.0, 0.0, 0.0];
    c
}

fn short_well(eps: f64) -> SimulationConfig {
    let mut c = well_scenario(eps);
    c.run.t_final = 20.0;
    c.run.extraction_cadence = 200;
    c
}

#[test]
fn free_soliton_follows_free_mechanics() {
    let rec = run(&free(50.0));
    assert!(rec.summary.failure.is_none());
    assert_eq!(rec.rows.len(), rec.mech.len());
    let mut worst = 0.0f64;
    for (r, m) in rec.rows.iter().zip(&rec.mech) {
        assert_eq!(r.t, m.t);
        worst = worst.max((r.q[0] - m.q[0]).abs());
    }
    assert!(worst <= 1e-6, "{worst}");
    // H_mech = p^2 / 2m is constant when eps = 0
    assert!(rec.summary.max_drift <= 1e-9, "{}", rec.summary.max_drift);
}

#[test]
fn own_trajectory_has_zero_distance() {
    let rec = run(&short_well(1e-2));
    let veff = rec.veff.as_ref().unwrap();
    let own = trajectory_as_orbit(&rec, rec.mech_mass);
    let report = compare(&rec, &own, veff, 0.0).unwrap();
    assert!(report.max_d_eps <= 1e-12, "{}", report.max_d_eps);
    assert!(report.max_q_difference <= 1e-12);
    assert_eq!(report.rows.len(), rec.rows.len());
}

#[test]
fn h_mech_column_matches_recomputation() {
    let rec = run(&short_well(1e-2));
    let veff = rec.veff.as_ref().unwrap();
    let h0 = rec.rows[0].h_mech;
    for r in &rec.rows {
        let h = mech_energy(&r.mech_state(), rec.mech_mass, rec.epsilon, veff).unwrap();
        assert!(
            (h - r.h_mech).abs() <= 1e-15 * h.abs().max(1.0),
            "{h} {}",
            r.h_mech
        );
        assert_eq!(r.h_mech_drift, (r.h_mech - h0).abs());
    }
    assert!(rec.summary.bound_level);
    assert!(rec.summary.critical.as_ref().unwrap().passed);
}

#[test]
fn perturbed_start_is_extracted() {
    let eps = 1e-2;
    let mut c = short_well(eps);
    c.run.perturbation = Some(PerturbationSpec {
        amplitude: 0.5,
        seed: 7,
        k_max: 2.0,
        envelope_width: 4.0,
    });
    let rec = run(&c);
    assert!(rec.summary.failure.is_none());
    let want = 0.5 * eps.sqrt();
    assert!(
        (rec.summary.perturbation_h1 - want).abs() <= 1e-12,
        "{}",
        rec.summary.perturbation_h1
    );
    // the perturbation is symplectically orthogonal to the tangent space, so it
    // shows up as the remainder rather than as a coordinate shift
    let phi0 = rec.rows[0].phi_h1;
    assert!((phi0 - want).abs() <= 0.05 * want, "{phi0} vs {want}");
    assert!(rec.rows.iter().all(|r| r.residual_max <= 1e-8));
}

#[test]
fn seeds_are_reproducible() {
    let mut c = short_well(1e-2);
    c.run.t_final = 2.0;
    c.run.perturbation = Some(PerturbationSpec {
        amplitude: 0.5,
        seed: 3,
        k_max: 2.0,
        envelope_width: 4.0,
    });
    let a = run(&c);
    let b = run(&c);
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.config_hash, b.config_hash);
    c.run.perturbation.as_mut().unwrap().seed = 4;
    let d = run(&c);
    assert_ne!(a.config_hash, d.config_hash);
    assert_ne!(a.rows[0].phi_h1, d.rows[0].phi_h1);
}

//! One scenario run: evolve the field, extract modulation coordinates at a
//! fixed cadence, and follow the effective mechanics alongside.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nlsv_core::evolve::{hamiltonian, run, EvolveDiagnostics, Flow, RunSettings};
use nlsv_core::field::{apply_symmetry, l2_norm_sq, norm, Space};
use nlsv_core::groundstate::{mass_curve, GroundStateFamily, SolitonManifold};
use nlsv_core::mech::{
    critical_value_check, mech_energy, mech_run, orbit_distance, periodic_orbit,
    CriticalValueCheck, EffectivePotential, Leapfrog, MechOrbit, MechState,
};
use nlsv_core::model::{Nonlinearity, NonlinearityKind, PerturbationSpec, ValidatedConfig};
use nlsv_core::modulation::{
    extract, extract_auto, project, Decomposition, ExtractOptions, SolitonCoordinates, Tangents,
};
use nlsv_core::{Complex64, FieldState, Grid};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::Result;
use crate::export::{save_json, Format, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioOptions {
    /// Keep every `phi_stride`-th remainder field (0 keeps none).
    pub phi_stride: usize,
    /// Keep the field every this many time steps (0 keeps none); rounded up
    /// to a multiple of the extraction cadence.
    pub field_cadence: usize,
    /// Critical-value margin as a fraction of `max |V_eff|`.
    pub critical_margin: f64,
    /// Samples per period of the reference mechanical orbit.
    pub orbit_samples: usize,
    /// Largest leapfrog step of the mechanical comparison trajectory.
    pub mech_dt: f64,
    /// The mass curve spans `[E / span, span E]`.
    pub energy_span: f64,
    pub curve_samples: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            phi_stride: 0,
            field_cadence: 0,
            critical_margin: 0.05,
            orbit_samples: 4000,
            mech_dt: 0.05,
            energy_span: 4.0,
            curve_samples: 9,
        }
    }
}

/// Everything needed before time stepping starts.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Arc<Grid>,
    pub manifold: SolitonManifold,
    pub energy: f64,
    pub psi0: FieldState,
    /// `|delta psi|_{H1}` of the added perturbation (0 without one).
    pub perturbation_h1: f64,
}

fn energy_cap(model: &Nonlinearity) -> f64 {
    match model.kind {
        NonlinearityKind::Saturable => model.c,
        NonlinearityKind::Power => f64::INFINITY,
    }
}

/// Energy with `m(E) = mass`, by bisection in `log E`.
fn energy_for_mass(family: &GroundStateFamily, mass: f64) -> Result<f64> {
    let cap = energy_cap(family.model());
    let mut lo: f64 = 1e-4;
    let mut hi: f64 = 1e4f64.min(cap * (1.0 - 1e-6));
    let (m_lo, m_hi) = (family.mass(lo)?, family.mass(hi)?);
    if !((m_lo - mass) * (m_hi - mass) <= 0.0) {
        return Err(nlsv_core::Error::OutOfRange {
            what: "reference mass",
            value: mass,
            lo: m_lo.min(m_hi),
            hi: m_lo.max(m_hi),
        }
        .into());
    }
    let increasing = m_hi > m_lo;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if (family.mass(mid)? < mass) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Soliton manifold at the configured reference energy or mass.
pub fn build_manifold(
    cfg: &ValidatedConfig,
    opts: &ScenarioOptions,
) -> Result<(SolitonManifold, f64)> {
    let c = &cfg.config;
    let family = Arc::new(GroundStateFamily::new(c.model, c.grid.dim)?);
    let energy = match (c.run.reference_energy, c.run.reference_mass) {
        (Some(e), _) => e,
        (None, Some(m)) => energy_for_mass(&family, m)?,
        (None, None) => unreachable!("validated config carries a reference value"),
    };
    let mass = family.mass(energy)?;
    let cap = energy_cap(&c.model) * (1.0 - 1e-3);
    let hi = (energy * opts.energy_span).min(0.5 * (energy + cap).min(2.0 * cap));
    let curve = Arc::new(mass_curve(
        family,
        energy / opts.energy_span,
        hi,
        opts.curve_samples,
    )?);
    Ok((SolitonManifold::new(curve, mass)?, energy))
}

/// Random band-limited field with a Gaussian envelope, made symplectically
/// orthogonal by `Pi_p` and scaled to `|.|_{H1} = amplitude sqrt(eps)`.
pub fn perturbation(spec: &PerturbationSpec, eps: f64, tangents: &Tangents) -> Result<FieldState> {
    let grid = tangents.eta().grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spectrum: Vec<Complex64> = (0..grid.len())
        .map(|i| {
            let re = rng.random_range(-1.0..1.0);
            let im = rng.random_range(-1.0..1.0);
            let k = grid.wavevector(i);
            let kk = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            let nyq = (0..grid.dim()).any(|a| grid.is_nyquist(i, a));
            if kk <= spec.k_max && !nyq {
                Complex64::new(re, im)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let w2 = spec.envelope_width * spec.envelope_width;
    let raw = FieldState::from_spectrum(&grid, spectrum)
        .mul_fn(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * w2)).exp());
    let proj = project(&raw, tangents)?;
    let h1 = norm(&proj, Space::H1)?;
    let target = spec.amplitude * eps.sqrt();
    if h1 == 0.0 || target == 0.0 {
        return Ok(FieldState::zeros(&grid));
    }
    Ok(proj.scale_real(target / h1))
}

pub fn prepare(cfg: &ValidatedConfig, opts: &ScenarioOptions) -> Result<Setup> {
    let c = &cfg.config;
    let grid = Grid::new(c.grid.dim, c.grid.grid_points, c.grid.box_length)?;
    let (manifold, energy) = build_manifold(cfg, opts)?;
    let p0 = c.run.p0;
    manifold.profile(&p0)?.check_decay(&grid)?;
    let tangents = Tangents::new(&p0, &manifold, &grid)?;
    let (delta, h1) = match &c.run.perturbation {
        Some(spec) => {
            let d = perturbation(spec, c.run.epsilon, &tangents)?;
            let h1 = norm(&d, Space::H1)?;
            (d, h1)
        }
        None => (FieldState::zeros(&grid), 0.0),
    };
    let psi0 = apply_symmetry(&tangents.eta().add(&delta)?, &c.run.q0);
    Ok(Setup {
        grid,
        manifold,
        energy,
        psi0,
        perturbation_h1: h1,
    })
}

/// One extraction sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: f64,
    pub p: [f64; 4],
    pub q: [f64; 4],
    pub h_mech: f64,
    pub h_mech_drift: f64,
    pub phi_h1: f64,
    pub phi_l2: f64,
    /// Weighted distance to the mechanical orbit; NaN when not computed.
    pub d_eps: f64,
    pub residual_max: f64,
    pub mass: f64,
    pub h_total: f64,
    /// `P_1..P_3` of the field.
    pub momentum: [f64; 3],
}

impl RunRow {
    pub const COLUMNS: [&'static str; 20] = [
        "t",
        "p1",
        "p2",
        "p3",
        "p4",
        "q1",
        "q2",
        "q3",
        "q4",
        "h_mech",
        "h_mech_drift",
        "phi_h1",
        "phi_l2",
        "d_eps",
        "residual_max",
        "mass",
        "h_total",
        "P1",
        "P2",
        "P3",
    ];

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        v.extend_from_slice(&self.p);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&[
            self.h_mech,
            self.h_mech_drift,
            self.phi_h1,
            self.phi_l2,
            self.d_eps,
            self.residual_max,
            self.mass,
            self.h_total,
        ]);
        v.extend_from_slice(&self.momentum);
        v
    }

    fn from_values(v: &[f64]) -> Self {
        Self {
            t: v[0],
            p: [v[1], v[2], v[3], v[4]],
            q: [v[5], v[6], v[7], v[8]],
            h_mech: v[9],
            h_mech_drift: v[10],
            phi_h1: v[11],
            phi_l2: v[12],
            d_eps: v[13],
            residual_max: v[14],
            mass: v[15],
            h_total: v[16],
            momentum: [v[17], v[18], v[19]],
        }
    }

    pub fn mech_state(&self) -> MechState {
        MechState {
            p: [self.p[0], self.p[1], self.p[2]],
            q: [self.q[0], self.q[1], self.q[2]],
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    pub steps_taken: usize,
    pub max_drift: f64,
    pub max_phi_h1: f64,
    /// NaN when `d_eps` was not computed.
    pub max_d_eps: f64,
    /// `max_drift / eps^{3/2}`.
    pub c1: Option<f64>,
    /// `max_d_eps / eps^{3/2}`.
    pub c2: Option<f64>,
    pub h_mech_initial: f64,
    /// `H_mech(0) / eps`, to be compared with the existential `K_2`.
    pub h_mech_ratio: Option<f64>,
    /// `H_mech(0) < 0`, i.e. below the value of `eps V_eff` at infinity.
    pub bound_level: bool,
    pub critical: Option<CriticalValueCheck>,
    pub orbit_period: Option<f64>,
    pub mass_drift_rel: f64,
    pub h_total_drift: f64,
    pub momentum_drift: f64,
    pub perturbation_h1: f64,
    pub partial: bool,
    pub failure: Option<Failure>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub epsilon: f64,
    pub dim: usize,
    pub energy: f64,
    pub mass: f64,
    /// `m + p_4(0) / 2`, the mass used by the mechanical system.
    pub mech_mass: f64,
    pub sample_interval: f64,
    pub summary: RunSummary,
    #[serde(skip)]
    pub rows: Vec<RunRow>,
    /// Mechanical trajectory from the first extracted point, at the row times.
    #[serde(skip)]
    pub mech: Vec<MechState>,
    #[serde(skip)]
    pub orbit: Option<MechOrbit>,
    #[serde(skip)]
    pub veff: Option<EffectivePotential>,
    /// Stored remainders `(t, Pi_p phi)`.
    #[serde(skip)]
    pub phi_snapshots: Vec<(f64, FieldState)>,
    #[serde(skip)]
    pub field_snapshots: Vec<(f64, FieldState)>,
    #[serde(skip)]
    pub diagnostics: Vec<EvolveDiagnostics>,
}

impl RunRecord {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&RunRow::COLUMNS);
        for r in &self.rows {
            t.push(r.values());
        }
        t
    }

    pub fn rows_from_table(table: &Table) -> Result<Vec<RunRow>> {
        let expected: Vec<String> = RunRow::COLUMNS.iter().map(|s| s.to_string()).collect();
        if table.columns != expected {
            return Err(crate::error::LabError::Format(
                "unexpected run table columns".into(),
            ));
        }
        Ok(table.rows.iter().map(|r| RunRow::from_values(r)).collect())
    }

    /// `(t, q_pde, q_mech)` side by side.
    pub fn mech_table(&self) -> Table {
        let mut t = Table::new(&[
            "t", "q1_pde", "q2_pde", "q3_pde", "q1_mech", "q2_mech", "q3_mech", "p1_mech",
            "p2_mech", "p3_mech",
        ]);
        for (r, m) in self.rows.iter().zip(&self.mech) {
            t.push(vec![
                r.t, r.q[0], r.q[1], r.q[2], m.q[0], m.q[1], m.q[2], m.p[0], m.p[1], m.p[2],
            ]);
        }
        t
    }
}

impl RunRecord {
    /// Writes `{stem}.csv` and `{stem}_mech.csv`, or the `{stem}.json` summary.
    pub fn export(&self, dir: &Path, stem: &str, format: Format) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        match format {
            Format::Csv => {
                let a = dir.join(format!("{stem}.csv"));
                let b = dir.join(format!("{stem}_mech.csv"));
                self.table().save(&a)?;
                self.mech_table().save(&b)?;
                Ok(vec![a, b])
            }
            Format::Json => {
                let a = dir.join(format!("{stem}.json"));
                save_json(self, &a)?;
                Ok(vec![a])
            }
        }
    }

    /// `(t, H, P1..P4, boundary_mass)` from the evolution diagnostics.
    pub fn diagnostics_table(&self) -> Table {
        let mut t = Table::new(&["t", "H", "P1", "P2", "P3", "P4", "boundary_mass"]);
        for d in &self.diagnostics {
            t.push(vec![
                d.time,
                d.hamiltonian,
                d.momenta[0],
                d.momenta[1],
                d.momenta[2],
                d.momenta[3],
                d.boundary_mass,
            ]);
        }
        t
    }
}

fn extrapolate(
    prev: &SolitonCoordinates,
    t_prev: f64,
    older: Option<&(f64, SolitonCoordinates)>,
    t: f64,
) -> SolitonCoordinates {
    let Some((t_old, old)) = older else {
        return *prev;
    };
    let s = (t - t_prev) / (t_prev - t_old);
    let mut out = *prev;
    for k in 0..4 {
        out.p[k] += s * (prev.p[k] - old.p[k]);
        out.q[k] += s * (prev.q[k] - old.q[k]);
    }
    out
}

/// Reference orbit for `d_eps`: one closed period when the motion is bound,
/// otherwise the trajectory over the horizon.
fn reference_orbit(
    s0: &MechState,
    m: f64,
    eps: f64,
    veff: &EffectivePotential,
    horizon: f64,
    opts: &ScenarioOptions,
) -> Result<MechOrbit> {
    if eps > 0.0
        && veff.node_values().iter().any(|v| *v != 0.0)
        && mech_energy(s0, m, eps, veff)? < 0.0
    {
        if let Ok(o) = periodic_orbit(s0, m, eps, veff, opts.orbit_samples, 4.0 * horizon.max(1.0))
        {
            return Ok(o);
        }
    }
    let dt = (horizon / opts.orbit_samples as f64).clamp(1e-6, opts.mech_dt);
    Ok(mech_run(s0, m, eps, veff, dt, horizon.max(dt))?)
}

fn extraction_options(cfg: &ValidatedConfig) -> ExtractOptions {
    ExtractOptions {
        tol: cfg.config.run.newton_tol,
        max_iter: cfg.config.run.newton_max_iter,
        ..Default::default()
    }
}

pub fn scenario_run(cfg: &ValidatedConfig) -> Result<RunRecord> {
    scenario_run_with(cfg, &ScenarioOptions::default())
}

pub fn scenario_run_with(cfg: &ValidatedConfig, opts: &ScenarioOptions) -> Result<RunRecord> {
    let setup = prepare(cfg, opts)?;
    run_prepared(cfg, &setup, opts)
}

pub fn run_prepared(
    cfg: &ValidatedConfig,
    setup: &Setup,
    opts: &ScenarioOptions,
) -> Result<RunRecord> {
    let c = &cfg.config;
    let eps = c.run.epsilon;
    let manifold = &setup.manifold;
    let xopts = extraction_options(cfg);
    let settings = RunSettings::from_config(cfg);
    let horizon = settings.steps as f64 * settings.dt;

    // mechanics from the first extracted point
    let first: Decomposition = extract_auto(&setup.psi0, manifold, None, &xopts)?;
    let mech_mass = manifold.effective_mass(&first.coords.p)?;
    let veff = EffectivePotential::build(
        &c.potential,
        &manifold.profile(&first.coords.p)?,
        &setup.grid,
    )?;
    let s0 = MechState::new(
        [first.coords.p[0], first.coords.p[1], first.coords.p[2]],
        [first.coords.q[0], first.coords.q[1], first.coords.q[2]],
    );
    let h0 = mech_energy(&s0, mech_mass, eps, &veff)?;
    let axial = c.potential.is_axially_symmetric(0);
    let orbit = if axial {
        Some(reference_orbit(&s0, mech_mass, eps, &veff, horizon, opts)?)
    } else {
        None
    };
    let critical = if eps > 0.0 && !c.potential.is_zero() {
        let scale = veff
            .node_values()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        Some(critical_value_check(
            h0,
            eps,
            &veff,
            opts.critical_margin * scale,
        )?)
    } else {
        None
    };

    let mut rows: Vec<RunRow> = Vec::new();
    let mut mech: Vec<MechState> = Vec::new();
    let mut snapshots = Vec::new();
    let mut fields = Vec::new();
    let field_every = match opts.field_cadence {
        0 => 0,
        n => n.div_ceil(settings.cadence) * settings.cadence,
    };
    let mut history: Vec<(f64, SolitonCoordinates)> = Vec::new();
    let mut failure: Option<Failure> = None;
    let mut mech_state = s0;
    let mut first = Some(first);
    let leap = |dt: f64| Leapfrog {
        veff: &veff,
        mass: mech_mass,
        eps,
        dt,
    };

    let mut observe = |step: usize, t: f64, psi: &FieldState| -> nlsv_core::Result<Flow> {
        if field_every > 0 && step % field_every == 0 {
            fields.push((t, psi.clone()));
        }
        let d = match first.take() {
            Some(d) => Ok(d),
            None => {
                let (t_prev, prev) = *history.last().expect("history holds the first sample");
                let start = extrapolate(
                    &prev,
                    t_prev,
                    history.len().checked_sub(2).map(|i| &history[i]),
                    t,
                );
                extract(psi, &start, manifold, &xopts)
                    .or_else(|_| extract_auto(psi, manifold, Some(&prev), &xopts))
            }
        };
        let d = match d {
            Ok(d) => d,
            Err(e) => {
                failure = Some(Failure {
                    time: t,
                    message: e.to_string(),
                });
                return Ok(Flow::Stop);
            }
        };
        // advance the comparison mechanics to t
        let gap = t - mech_state.t;
        if gap > 0.0 {
            let n = (gap / opts.mech_dt).ceil().max(1.0) as usize;
            let lf = leap(gap / n as f64);
            for _ in 0..n {
                mech_state = lf.step(&mech_state)?;
            }
            mech_state.t = t;
        }
        let state = MechState {
            p: [d.coords.p[0], d.coords.p[1], d.coords.p[2]],
            q: [d.coords.q[0], d.coords.q[1], d.coords.q[2]],
            t,
        };
        let h = mech_energy(&state, mech_mass, eps, &veff)?;
        let d_eps = match &orbit {
            Some(o) => orbit_distance(&state, o, &veff)?,
            None => f64::NAN,
        };
        let mom = nlsv_core::field::momenta(psi);
        rows.push(RunRow {
            t,
            p: d.coords.p,
            q: d.coords.q,
            h_mech: h,
            h_mech_drift: (h - h0).abs(),
            phi_h1: d.phi_h1,
            phi_l2: d.phi_l2,
            d_eps,
            residual_max: d.residual_max(),
            mass: l2_norm_sq(psi),
            h_total: hamiltonian(psi, &c.model, &c.potential, eps),
            momentum: [mom[0], mom[1], mom[2]],
        });
        mech.push(mech_state);
        if opts.phi_stride > 0 && (rows.len() - 1) % opts.phi_stride == 0 {
            snapshots.push((t, d.remainder.clone()));
        }
        history.push((t, d.coords));
        if history.len() > 2 {
            history.remove(0);
        }
        Ok(Flow::Continue)
    };
    let outcome = run(&settings, &setup.psi0, &mut observe)?;

    let r0 = rows[0];
    let max_of = |f: &dyn Fn(&RunRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    let max_drift = max_of(&|r| r.h_mech_drift);
    let max_phi_h1 = max_of(&|r| r.phi_h1);
    let max_d_eps = if orbit.is_some() {
        max_of(&|r| r.d_eps)
    } else {
        f64::NAN
    };
    let mass_drift_rel = max_of(&|r| (r.mass - r0.mass).abs()) / r0.mass;
    let h_total_drift = max_of(&|r| (r.h_total - r0.h_total).abs());
    let momentum_drift = max_of(&|r| {
        (0..3)
            .map(|k| (r.momentum[k] - r0.momentum[k]).abs())
            .fold(0.0, f64::max)
    });
    let scale = eps.powf(1.5);
    let summary = RunSummary {
        samples: rows.len(),
        steps_taken: outcome.steps_taken,
        max_drift,
        max_phi_h1,
        max_d_eps,
        c1: (eps > 0.0).then(|| max_drift / scale),
        c2: (eps > 0.0 && orbit.is_some()).then(|| max_d_eps / scale),
        h_mech_initial: h0,
        h_mech_ratio: (eps > 0.0).then(|| h0 / eps),
        bound_level: h0 < 0.0,
        critical,
        orbit_period: orbit.as_ref().and_then(|o| o.period),
        mass_drift_rel,
        h_total_drift,
        momentum_drift,
        perturbation_h1: setup.perturbation_h1,
        partial: failure.is_some(),
        failure,
        warnings: cfg
            .warnings
            .iter()
            .chain(&outcome.warnings)
            .cloned()
            .collect(),
    };
    Ok(RunRecord {
        config_hash: config_hash(c),
        epsilon: eps,
        dim: c.grid.dim,
        energy: setup.energy,
        mass: manifold.mass,
        mech_mass,
        sample_interval: settings.dt * settings.cadence as f64,
        summary,
        rows,
        mech,
        orbit,
        veff: Some(veff),
        phi_snapshots: snapshots,
        field_snapshots: fields,
        diagnostics: outcome.diagnostics,
    })
}

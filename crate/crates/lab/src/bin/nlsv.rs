use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nlsv_core::groundstate::{mass_curve, GroundStateFamily};
use nlsv_core::mech::{
    critical_value_check, harmonic_period, mech_energy, mech_run, EffectivePotential, MechState,
};
use nlsv_core::model::ValidatedConfig;
use nlsv_core::spectral::{check_h2_h3_h5, HypothesisOptions};
use nlsv_core::Grid;
use nlsv_lab::compare::compare;
use nlsv_lab::config::load_config;
use nlsv_lab::export::{density_profile, save_json, write_snapshot, Format, Table};
use nlsv_lab::scenario::{build_manifold, scenario_run_with, ScenarioOptions};
use nlsv_lab::strichartz::strichartz_diagnostic;
use nlsv_lab::sweep::{epsilon_sweep, SweepSettings};
use nlsv_lab::{LabError, Result};
use serde::Serialize;

/// Soliton dynamics of the NLS equation with a weak external potential.
#[derive(Debug, Parser)]
#[command(name = "nlsv", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the perturbation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ground state at the reference energy.
    Groundstate,
    /// Sampled mass curve m(E) with slopes.
    Masscurve(MassCurveArgs),
    /// Linearized spectra and the kernel / internal-mode checks.
    Spectrum(SpectrumArgs),
    /// Scenario run: evolution, coordinate extraction, mechanics, exports.
    Simulate(SimulateArgs),
    /// Effective mechanics alone from the configured initial point.
    Mech(MechArgs),
    /// Epsilon sweep with log-log scaling fits.
    Sweep(SweepArgs),
    /// Scenario run compared against its reference mechanical orbit.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct MassCurveArgs {
    #[arg(long, default_value_t = 0.25)]
    e_min: f64,
    #[arg(long, default_value_t = 4.0)]
    e_max: f64,
    #[arg(long, default_value_t = 16)]
    samples: usize,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 2048)]
    n: usize,
    /// Domain radius in units of 1/sqrt(E).
    #[arg(long, default_value_t = 40.0)]
    radius: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Strichartz pairs `r,s` evaluated on the remainder series.
    #[arg(long = "pair", value_parser = parse_pair)]
    pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Args)]
struct MechArgs {
    /// Leapfrog step.
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1e-2,4e-3,1e-3")]
    eps: Vec<f64>,
    /// Horizon in slow time; each run ends at t0 / eps.
    #[arg(long, default_value_t = 5.0)]
    t0: f64,
    /// Extraction samples per run.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long = "pair", value_parser = parse_pair)]
    pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Critical-value margin as a fraction of max |V_eff|.
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected r,s")?;
    let parse = |x: &str| -> std::result::Result<f64, String> {
        match x.trim() {
            "inf" => Ok(f64::INFINITY),
            v => v.parse().map_err(|e| format!("{v}: {e}")),
        }
    };
    Ok((parse(a)?, parse(b)?))
}

fn config(cli: &Cli) -> Result<ValidatedConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| LabError::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let (Some(seed), Some(p)) = (cli.seed, cfg.config.run.perturbation.as_mut()) {
        p.seed = seed;
    }
    Ok(cfg)
}

fn reference_energy(cfg: &ValidatedConfig) -> Result<f64> {
    Ok(build_manifold(cfg, &ScenarioOptions::default())?.1)
}

#[derive(Serialize)]
struct GroundStateSummary {
    energy: f64,
    dim: usize,
    mass: f64,
    peak: f64,
    decay_rate: f64,
    measured_decay_rate: f64,
    residual: f64,
    warnings: Vec<String>,
}

fn groundstate(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = config(cli)?;
    let c = &cfg.config;
    let energy = reference_energy(&cfg)?;
    let family = GroundStateFamily::new(c.model, c.grid.dim)?;
    let profile = family.profile(energy)?;
    let (r, b) = profile.samples();
    let mut t = Table::new(&["r", "b"]);
    for (x, y) in r.iter().zip(&b) {
        t.push(vec![*x, *y]);
    }
    t.save(&out.join("groundstate.csv"))?;
    let grid = Grid::new(c.grid.dim, c.grid.grid_points, c.grid.box_length)?;
    density_profile(&profile.on_grid(&grid)?).save(&out.join("groundstate_density.csv"))?;
    save_json(
        &GroundStateSummary {
            energy,
            dim: c.grid.dim,
            mass: profile.mass(),
            peak: profile.peak(),
            decay_rate: profile.decay_rate(),
            measured_decay_rate: profile.measured_decay_rate(),
            residual: profile.residual(),
            warnings: profile.warnings.clone(),
        },
        &out.join("groundstate.json"),
    )?;
    println!(
        "E = {energy}, m = {:.12}, residual = {:.3e}",
        profile.mass(),
        profile.residual()
    );
    Ok(())
}

fn masscurve(cli: &Cli, out: &Path, a: &MassCurveArgs) -> Result<()> {
    let cfg = config(cli)?;
    let family = Arc::new(GroundStateFamily::new(
        cfg.config.model,
        cfg.config.grid.dim,
    )?);
    let curve = mass_curve(family, a.e_min, a.e_max, a.samples)?;
    let mut t = Table::new(&["energy", "mass", "slope"]);
    for i in 0..curve.energies.len() {
        t.push(vec![curve.energies[i], curve.masses[i], curve.slopes[i]]);
    }
    t.save(&out.join("masscurve.csv"))?;
    let h2 = nlsv_core::groundstate::check_h2(&curve);
    #[derive(Serialize)]
    struct Summary {
        monotone: bool,
        h2: Option<String>,
    }
    save_json(
        &Summary {
            monotone: curve.monotone,
            h2: h2.as_ref().err().map(|e| e.to_string()),
        },
        &out.join("masscurve.json"),
    )?;
    match h2 {
        Ok(()) => println!("mass curve monotone over [{}, {}]", a.e_min, a.e_max),
        Err(e) => println!("{e}"),
    }
    Ok(())
}

fn spectrum(cli: &Cli, out: &Path, a: &SpectrumArgs) -> Result<()> {
    let cfg = config(cli)?;
    let energy = reference_energy(&cfg)?;
    let opts = HypothesisOptions {
        n: a.n,
        r_scaled: a.radius,
        ..Default::default()
    };
    let s = check_h2_h3_h5(&cfg.config.model, energy, cfg.config.grid.dim, &opts)?;
    save_json(&s, &out.join("spectrum.json"))?;
    println!("H2 {} H3 {} H5 {}", s.h2_ok, s.h3_ok, s.h5_ok);
    for n in &s.notes {
        println!("note: {n}");
    }
    Ok(())
}

/// Exit status 3 for a partial run.
fn simulate(cli: &Cli, out: &Path, a: &SimulateArgs) -> Result<bool> {
    let cfg = config(cli)?;
    let opts = ScenarioOptions {
        field_cadence: cfg.config.output.snapshot_cadence,
        phi_stride: usize::from(!a.pairs.is_empty()),
        ..Default::default()
    };
    let rec = scenario_run_with(&cfg, &opts)?;
    rec.export(out, "run", Format::Csv)?;
    rec.export(out, "run", Format::Json)?;
    rec.diagnostics_table().save(&out.join("diagnostics.csv"))?;
    for (k, (t, psi)) in rec.field_snapshots.iter().enumerate() {
        write_snapshot(
            std::fs::File::create(out.join(format!("snapshot_{k:05}.bin")))?,
            psi,
            *t,
        )?;
    }
    if !a.pairs.is_empty() {
        let phis: Vec<_> = rec.phi_snapshots.iter().map(|(_, f)| f.clone()).collect();
        let st = strichartz_diagnostic(&phis, rec.sample_interval, &a.pairs)?;
        save_json(&st, &out.join("strichartz.json"))?;
    }
    let s = &rec.summary;
    println!(
        "samples {} max drift {:.3e} max |phi|_H1 {:.3e} max d_eps {:.3e} mass drift {:.3e}",
        s.samples, s.max_drift, s.max_phi_h1, s.max_d_eps, s.mass_drift_rel
    );
    for w in &s.warnings {
        println!("warning: {w}");
    }
    if let Some(f) = &s.failure {
        println!("partial run: {} at t = {}", f.message, f.time);
    }
    Ok(s.partial)
}

fn mech(cli: &Cli, out: &Path, a: &MechArgs) -> Result<()> {
    let cfg = config(cli)?;
    let c = &cfg.config;
    let opts = ScenarioOptions::default();
    let (manifold, _) = build_manifold(&cfg, &opts)?;
    let grid = Grid::new(c.grid.dim, c.grid.grid_points, c.grid.box_length)?;
    let p = c.run.p0;
    let m = manifold.effective_mass(&p)?;
    let veff = EffectivePotential::build(&c.potential, &manifold.profile(&p)?, &grid)?;
    let eps = c.run.epsilon;
    let s0 = MechState::new([p[0], p[1], p[2]], [c.run.q0[0], c.run.q0[1], c.run.q0[2]]);
    let orbit = mech_run(&s0, m, eps, &veff, a.dt, c.run.t_final)?;
    let mut t = Table::new(&["t", "p1", "p2", "p3", "q1", "q2", "q3", "h_mech"]);
    for s in &orbit.samples {
        t.push(vec![
            s.t,
            s.p[0],
            s.p[1],
            s.p[2],
            s.q[0],
            s.q[1],
            s.q[2],
            mech_energy(s, m, eps, &veff)?,
        ]);
    }
    t.save(&out.join("mech.csv"))?;
    #[derive(Serialize)]
    struct Summary {
        mass: f64,
        energy: f64,
        harmonic_period_at_origin: Option<f64>,
        critical: Option<nlsv_core::mech::CriticalValueCheck>,
    }
    let critical = if eps > 0.0 {
        critical_value_check(
            orbit.energy,
            eps,
            &veff,
            0.05 * veff
                .node_values()
                .iter()
                .fold(0.0f64, |x, v| x.max(v.abs())),
        )
        .ok()
    } else {
        None
    };
    save_json(
        &Summary {
            mass: m,
            energy: orbit.energy,
            harmonic_period_at_origin: (eps > 0.0)
                .then(|| harmonic_period(0.0, m, eps, &veff).ok())
                .flatten(),
            critical,
        },
        &out.join("mech.json"),
    )?;
    println!(
        "H_mech = {:.12e} over {} samples",
        orbit.energy,
        orbit.samples.len()
    );
    Ok(())
}

fn sweep(cli: &Cli, out: &Path, a: &SweepArgs) -> Result<()> {
    let cfg = config(cli)?;
    let settings = SweepSettings {
        t0: a.t0,
        samples: a.samples,
        strichartz_pairs: a.pairs.clone(),
        ..Default::default()
    };
    let (res, records) = epsilon_sweep(&cfg.config, &a.eps, &settings)?;
    // single-threaded reduction: per-run files, then the merged table
    for r in &records {
        let stem = format!("run_eps_{:e}", r.epsilon);
        r.export(out, &stem, Format::Csv)?;
        r.export(out, &stem, Format::Json)?;
    }
    res.table().save(&out.join("sweep.csv"))?;
    save_json(&res, &out.join("sweep.json"))?;
    println!(
        "drift slope {:.3} (residual {:.3})",
        res.drift_fit.slope, res.drift_fit.residual
    );
    println!(
        "phi slope   {:.3} (residual {:.3})",
        res.phi_fit.slope, res.phi_fit.residual
    );
    if let Some(f) = res.d_eps_fit {
        println!("d_eps slope {:.3} (residual {:.3})", f.slope, f.residual);
    }
    for f in &res.failures {
        println!("failed eps = {}: {}", f.epsilon, f.message);
    }
    Ok(())
}

fn compare_cmd(cli: &Cli, out: &Path, a: &CompareArgs) -> Result<bool> {
    let cfg = config(cli)?;
    let rec = scenario_run_with(&cfg, &ScenarioOptions::default())?;
    let (Some(orbit), Some(veff)) = (rec.orbit.as_ref(), rec.veff.as_ref()) else {
        return Err(LabError::Config(
            "comparison needs an axially symmetric potential".into(),
        ));
    };
    let scale = veff
        .node_values()
        .iter()
        .fold(0.0f64, |x, v| x.max(v.abs()));
    let report = compare(&rec, orbit, veff, a.margin * scale)?;
    rec.export(out, "run", Format::Csv)?;
    report.table().save(&out.join("compare.csv"))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config_hash: &'a str,
        max_d_eps: f64,
        mean_d_eps: f64,
        max_q_difference: f64,
        critical: &'a Option<nlsv_core::mech::CriticalValueCheck>,
    }
    save_json(
        &Summary {
            config_hash: &rec.config_hash,
            max_d_eps: report.max_d_eps,
            mean_d_eps: report.mean_d_eps,
            max_q_difference: report.max_q_difference,
            critical: &report.critical,
        },
        &out.join("compare.json"),
    )?;
    println!(
        "max d_eps {:.3e}, mean {:.3e}",
        report.max_d_eps, report.mean_d_eps
    );
    Ok(rec.summary.partial)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Groundstate => groundstate(cli, out).map(|_| false),
        Command::Masscurve(a) => masscurve(cli, out, a).map(|_| false),
        Command::Spectrum(a) => spectrum(cli, out, a).map(|_| false),
        Command::Simulate(a) => simulate(cli, out, a),
        Command::Mech(a) => mech(cli, out, a).map(|_| false),
        Command::Sweep(a) => sweep(cli, out, a).map(|_| false),
        Command::Compare(a) => compare_cmd(cli, out, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

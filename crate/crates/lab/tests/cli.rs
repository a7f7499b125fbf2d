use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlsv_lab::config::{to_toml, well_scenario};

fn nlsv(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nlsv"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).args(args).output().unwrap()
}

fn short_config(dir: &Path) -> PathBuf {
    let mut c = well_scenario(1e-2);
    c.run.t_final = 1.0;
    c.run.extraction_cadence = 100;
    let path = dir.join("short.toml");
    std::fs::write(&path, to_toml(&c).unwrap()).unwrap();
    path
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlsv(&["groundstate"], None, dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut c = well_scenario(1e-2);
    c.run.dt = -1.0;
    std::fs::write(&path, to_toml(&c).unwrap()).unwrap();
    let o = nlsv(&["simulate"], Some(&path), dir.path());
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    std::fs::write(&path, "[model]\nkind = \"power\"\n").unwrap();
    let o = nlsv(&["simulate"], Some(&path), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = nlsv(&["simulate"], Some(&cfg), out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["run.csv", "run_mech.csv", "run.json", "diagnostics.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn groundstate_and_mech_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("o");
    for cmd in ["groundstate", "mech"] {
        let o = nlsv(&[cmd], Some(&cfg), &out);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for f in [
        "groundstate.csv",
        "groundstate.json",
        "mech.csv",
        "mech.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("groundstate.json")).unwrap())
            .unwrap();
    assert!((summary["mass"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn short_sweep_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = nlsv(&["sweep", "--eps", "1e-2,4e-3"], Some(&cfg), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

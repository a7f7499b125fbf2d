use std::io::Cursor;

use nlsv_core::model::validate_config;
use nlsv_core::{Complex64, FieldState, Grid};
use nlsv_lab::config::{parse_config, to_toml, well_scenario};
use nlsv_lab::export::{read_snapshot, write_snapshot, Format, Table};
use nlsv_lab::scenario::{scenario_run, RunRecord};

#[test]
fn run_table_survives_csv() {
    let mut c = well_scenario(1e-2);
    c.run.t_final = 2.0;
    c.run.extraction_cadence = 100;
    let rec = scenario_run(&validate_config(&c).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = rec.export(dir.path(), "run", Format::Csv).unwrap();
    assert_eq!(files.len(), 2);
    let back =
        RunRecord::rows_from_table(&Table::load(&dir.path().join("run.csv")).unwrap()).unwrap();
    assert_eq!(back.len(), rec.rows.len());
    for (a, b) in back.iter().zip(&rec.rows) {
        // compare bit patterns so NaN entries count as equal
        let bits = |r: &nlsv_lab::scenario::RunRow| {
            let mut v = vec![
                r.t,
                r.h_mech,
                r.h_mech_drift,
                r.phi_h1,
                r.phi_l2,
                r.d_eps,
                r.residual_max,
                r.mass,
                r.h_total,
            ];
            v.extend(r.p);
            v.extend(r.q);
            v.extend(r.momentum);
            v.into_iter().map(f64::to_bits).collect::<Vec<_>>()
        };
        assert_eq!(bits(a), bits(b));
    }
    let json = rec.export(dir.path(), "run", Format::Json).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json[0]).unwrap()).unwrap();
    assert_eq!(v["config_hash"].as_str().unwrap(), rec.config_hash);
    assert_eq!(
        v["summary"]["samples"].as_u64().unwrap() as usize,
        rec.rows.len()
    );
}

#[test]
fn csv_is_byte_stable() {
    let mut t = Table::new(&["a", "b"]);
    t.push(vec![0.1, -2.5e-300]);
    t.push(vec![f64::MAX, 1.0 / 3.0]);
    let s = t.to_csv_string().unwrap();
    let back = Table::read_csv(s.as_bytes()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_csv_string().unwrap(), s);
}

#[test]
fn snapshot_round_trip_3d() {
    let g = Grid::new(3, 8, 6.0).unwrap();
    let psi = FieldState::from_fn(&g, |x| Complex64::new(x[0] - 0.5 * x[2], x[1] * x[1]));
    let mut buf = Vec::new();
    write_snapshot(&mut buf, &psi, 0.75).unwrap();
    assert_eq!(buf.len(), 64 + 16 * 512);
    let (back, t) = read_snapshot(Cursor::new(&buf)).unwrap();
    assert_eq!(t, 0.75);
    assert_eq!(back.values(), psi.values());
    assert_eq!(back.grid().dim(), 3);
    assert_eq!(back.grid().length(), 6.0);
}

#[test]
fn config_toml_round_trip() {
    let c = well_scenario(4e-3);
    let back = parse_config(&to_toml(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}

use std::path::Path;
use std::process::{Command, Output};

use scse::table::{Cell, Table};

fn scse(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scse"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCSE_JOBS")
        .output()
        .expect("run scse")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = scse(&["se-run", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn unknown_command_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = scse(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn every_command_help_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["se-run", "threshold", "phase-diagram", "seed-diagram", "speed-curve", "amp-validate"] {
        let o = scse(&[cmd, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for needle in ["Defaults:", "4w+8", "5e-4", "w=16, L=640", "alpha_s <= 1.5", "whole profile"] {
            assert!(text.contains(needle), "{cmd} --help lacks {needle:?}");
        }
    }
}

#[test]
fn threshold_writes_one_row_and_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = scse(&["threshold", "--kind", "bp", "--rho", "0.3", "--delta", "1e-10", "--out", "bp.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("alpha_BP"));
    let t = Table::read_json(&dir.path().join("bp.json")).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.config["command"], "threshold");
    assert_eq!(t.config["rho"], 0.3);
    let o = scse(&["threshold", "--kind", "bp", "--rho", "0.3", "--delta", "1e-10"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = Table::read_csv(&dir.path().join("threshold.csv")).unwrap();
    assert_eq!(csv.rows, t.rows);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"L":30,"w":1,"w_s":6,"alpha_b":0.7,"alpha_s":1.0,"rho":0.3,"delta":1e-10}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = scse(&["se-run", "--config", "cfg.json", "--alpha-b", "0.65", "--profiles", "p.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read_csv(&dir.path().join("se_run.csv")).unwrap();
    assert_eq!(t.config["alpha_b"], 0.65);
    assert_eq!(t.config["L"], 30);
    assert_eq!(t.columns, ["iteration", "front_position", "mean_mse", "max_mse"]);
    let p = Table::read_csv(&dir.path().join("p.csv")).unwrap();
    assert_eq!(p.rows.len(), 30 * t.rows.len());
    assert_eq!(p.rows[0][..2], [Cell::Int(1), Cell::Int(0)]);
}

#[test]
fn invalid_values_exit_2_and_unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = scse(&["se-run", "--rho", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = scse(&["speed-curve", "--alpha-b-range", "0.3:0.2:0.01"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = scse(&["se-run", "--L", "4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = scse(&["threshold", "--kind", "bp", "--out", "/nonexistent-dir/t.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent-dir/t.csv"));
}

#[test]
fn seed_diagram_reports_and_writes_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let o = scse(&["--jobs", "1", "seed-diagram", "--L", "60", "--ws-range", "2:6:4", "--out", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read_csv(&dir.path().join("s.csv")).unwrap();
    assert_eq!(t.columns, ["w_s", "alpha_s_star", "alpha_eff"]);
    assert_eq!(t.rows.len(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("optimum"));
}

#[test]
fn amp_validate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["amp-validate", "--L", "4", "--w-s", "1", "--N", "400", "--seeds", "2", "--iterations", "5"];
    let a = scse(&[&args[..], &["--out", "a.csv", "--persist", "inst"]].concat(), dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = scse(&[&args[..], &["--out", "b.csv"]].concat(), dir.path());
    assert_eq!(b.status.code(), Some(0));
    let ta = Table::read_csv(&dir.path().join("a.csv")).unwrap();
    let tb = Table::read_csv(&dir.path().join("b.csv")).unwrap();
    assert_eq!(ta.rows, tb.rows);
    assert_eq!(ta.rows.len(), 4 * 5);
    assert!(dir.path().join("inst.json").exists() && dir.path().join("inst.bin").exists());
    let o = scse(&["amp-validate", "--L", "3", "--N", "400"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_command_entry_point() {
    assert_eq!(scse_cli::run_command(["scse", "--version"]), 0);
    assert_eq!(scse_cli::run_command(["scse"]), 2);
    assert_eq!(scse_cli::run_command(["scse", "--jobs", "0", "se-run"]), 2);
}

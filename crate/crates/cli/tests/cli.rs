//! Drives the `crossdiff` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crossdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossdiff")).args(args).output().unwrap()
}

fn text(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// The `# config_hash=` value of a CSV file.
fn csv_hash(path: &Path) -> String {
    text(path)
        .lines()
        .find_map(|l| l.strip_prefix("# config_hash=").map(str::to_string))
        .unwrap()
}

/// Rows of a CSV file below its header, split on commas.
fn rows(path: &Path) -> Vec<Vec<String>> {
    text(path)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL_RUN: &[&str] = &["--preset", "gaussian_eps05", "--cells", "72", "--t-final", "0.1"];

#[test]
fn run_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g05");
    let out_str = out.to_str().unwrap();
    let mut args = vec!["run", "--out", out_str];
    args.extend_from_slice(SMALL_RUN);
    let o = crossdiff(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let meta: serde_json::Value = serde_json::from_str(&text(&out.join("metadata.json"))).unwrap();
    let hash = meta["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(meta["status"], "completed");
    assert_eq!(csv_hash(&out.join("diagnostics.csv")), hash);
    let snapshots = meta["snapshots"].as_array().unwrap();
    assert_eq!(snapshots.len(), 3);
    for s in snapshots {
        assert_eq!(csv_hash(&out.join(s.as_str().unwrap())), hash);
    }
    assert!(text(&out.join("profiles.svg")).contains(hash));

    // The entropy rate is undefined where cells vanish, so nothing can be
    // checked and the audit does not pass.
    let o = crossdiff(&["audit", out_str]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 checked, 3 skipped"));
}

#[test]
fn audit_of_a_positive_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("floor.toml");
    fs::write(
        &config,
        "preset = \"gaussian_eps05\"\n\n[mesh]\ncells = 72\n\n[time]\nt_final = 0.1\n\n\
         [initial.rho]\nkind = \"parabola\"\nlo = 6.5\nhi = 9.5\nmass = 1.0\nfloor = 0.01\n\n\
         [initial.eta]\nkind = \"parabola\"\nlo = 6.5\nhi = 9.5\nmass = 1.0\nfloor = 0.01\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let out_str = out.to_str().unwrap();
    let o = crossdiff(&["run", "--config", config.to_str().unwrap(), "--out", out_str]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = crossdiff(&["audit", out_str]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS: 3 checked"));
    let meta: serde_json::Value = serde_json::from_str(&text(&out.join("metadata.json"))).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text(&out.join("audit.json"))).unwrap();
    assert_eq!(report["config_hash"], meta["config_hash"]);

    // A tampered snapshot no longer belongs to the run.
    let hash = meta["config_hash"].as_str().unwrap();
    let first = out.join(meta["snapshots"][1].as_str().unwrap());
    let tampered = text(&first).replacen(hash, &"0".repeat(64), 1);
    fs::write(&first, tampered).unwrap();
    assert_eq!(crossdiff(&["audit", out_str]).status.code(), Some(2));
}

#[test]
fn equal_configurations_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let mut args = vec!["run", "--out", out.to_str().unwrap()];
        args.extend_from_slice(SMALL_RUN);
        assert!(crossdiff(&args).status.success());
    }
    for file in ["diagnostics.csv", "snapshots/snapshot_00002.csv", "profiles.svg"] {
        assert_eq!(fs::read(outs[0].join(file)).unwrap(), fs::read(outs[1].join(file)).unwrap(), "{file}");
    }
}

#[test]
fn nothing_moves_without_diffusion_or_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("still.toml");
    fs::write(
        &config,
        "preset = \"diffusive_asymmetric\"\neps = 0.0\nnu = 0.0\n\n[mesh]\ncells = 68\n\n[time]\nt_final = 0.2\ndt_report = 0.1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = crossdiff(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let diagnostics = rows(&out.join("diagnostics.csv"));
    assert_eq!(diagnostics.len(), 3);
    for row in &diagnostics {
        assert_eq!(row[1], diagnostics[0][1], "mass_rho");
        assert_eq!(row[2], diagnostics[0][2], "mass_eta");
        assert_eq!(row[5], diagnostics[0][5], "entropy");
        assert_eq!(row[6].parse::<f64>().unwrap(), 0.0, "dissipation");
    }
    let first = rows(&out.join("snapshots/snapshot_00000.csv"));
    let last = rows(&out.join("snapshots/snapshot_00002.csv"));
    assert_eq!(first, last);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "preset = \"gaussian_eps01\"\n\n[time]\nt_finale = 1.0\n").unwrap();
    let o = crossdiff(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("time.t_finale: unknown key"));

    let o = crossdiff(&["run", "--preset", "no_such_preset"]);
    assert_eq!(o.status.code(), Some(2));
    let o = crossdiff(&["run", "--preset", "gaussian_eps01", "--eps", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn steady_reports_a_stationary_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steady");
    let o = crossdiff(&["steady", "--preset", "newtonian_attratt", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&text(&out.join("stationary.json"))).unwrap();
    assert_eq!(report["stationary"], true);
    assert!(report["residual"].as_f64().unwrap() < 1e-8);
    assert!(!rows(&out.join("residuals.csv")).is_empty());
    assert_eq!(rows(&out.join("final_state.csv")).len(), 1280);
}

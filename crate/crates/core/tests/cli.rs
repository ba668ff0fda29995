#![cfg(feature = "cli")]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use replica_access::harness::{read_results_csv, table_file_name, CACHE_DIR_ENV};
use replica_access::PolicyTable;

fn cli(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replica-access")).args(args).env(CACHE_DIR_ENV, cache).output().unwrap()
}

fn write_spec(dir: &Path, algorithms: &str) -> std::path::PathBuf {
    let spec = format!(
        r#"{{
  "base": {{"n_channels": 1, "load_per_channel": 0.0, "erasure_prob": 0.0,
            "horizon_slots": 4000, "seed": 5, "algorithm": "h1"}},
  "lambda_grid": [0.1, 0.3],
  "gamma_grid": [0.0],
  "m_grid": [6],
  "algorithms": {algorithms},
  "n_replications": 3,
  "output_path": "{}",
  "table_cache_dir": "{}"
}}"#,
        dir.join("results.csv").display(),
        dir.join("unused-cache").display()
    );
    let path = dir.join("spec.json");
    fs::write(&path, spec).unwrap();
    path
}

#[test]
fn table_is_idempotent_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    let o = out.to_str().unwrap();
    assert!(cli(&["table", "-m", "4", "-g", "0", "--n-max", "8", "--out", o], dir.path()).status.success());
    let first = fs::read(&out).unwrap();
    let t = PolicyTable::from_json(std::str::from_utf8(&first).unwrap()).unwrap();
    assert_eq!(t.replicas_for(2), 2);

    assert!(cli(&["table", "-m", "4", "-g", "0", "--n-max", "8", "--out", o], dir.path()).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    let refused = cli(&["table", "-m", "4", "-g", "0.5", "--n-max", "8", "--out", o], dir.path());
    assert_eq!(refused.status.code(), Some(2));
    assert_eq!(fs::read(&out).unwrap(), first);
    let forced = cli(&["table", "-m", "4", "-g", "0.5", "--n-max", "8", "--out", o, "--force"], dir.path());
    assert!(forced.status.success());
    assert_ne!(fs::read(&out).unwrap(), first);
}

#[test]
fn table_defaults_to_the_cache_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    assert!(cli(&["table", "-m", "1", "-g", "0.3"], &cache).status.success());
    let text = fs::read_to_string(cache.join(table_file_name(1, 0.3))).unwrap();
    let t = PolicyTable::from_json(&text).unwrap();
    assert!(t.entries().iter().all(|e| e.replicas == 1));
}

#[test]
fn bounds_marks_the_stability_region() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let o = cli(&["bounds", "--gamma", "0,0.4", "--lambda", "0.3", "--out", out.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# replica-access bounds v1"));
    assert!(lines[2].starts_with("0.0,0.3,true,0.1894"));
    assert_eq!(lines[3], "0.4,0.3,false,,,,,");

    let empty = cli(&["bounds", "--gamma", "0.4", "--lambda", "0.3"], dir.path());
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let spec = write_spec(dir.path(), r#"["h1", "hk", "a1", "ak", "ak_mod"]"#);
    let s = spec.to_str().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(cli(&["simulate", "--config", s, "--out", a.to_str().unwrap()], &cache).status.success());
    let one = cli(&["simulate", "--config", s, "--out", b.to_str().unwrap(), "--workers", "1"], &cache);
    assert!(one.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(cache.join(table_file_name(6, 0.0)).exists());
    assert!(dir.path().join("a.log").exists());

    let rows = read_results_csv(&a).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(fs::read_to_string(&a).unwrap().starts_with("# replica-access results v1"));
    for r in &rows {
        assert_eq!(r.n_channels, 6);
        assert!(r.bound_eta_star.is_some());
        assert!(r.mean_backlog_per_channel >= r.bound_eta_star.unwrap() - 3.0 * r.ci95);
    }
}

#[test]
fn exit_codes_separate_config_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "[]");
    let o = cli(&["simulate", "--config", spec.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let missing = cli(&["simulate", "--config", "does-not-exist.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));

    let spec = write_spec(dir.path(), r#"["h1"]"#);
    let blocked = dir.path().join("blocked");
    fs::write(&blocked, "a file, not a directory").unwrap();
    let out = blocked.join("out.csv");
    let o = cli(&["simulate", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

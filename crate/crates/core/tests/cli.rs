//! Command-line behaviour: exit codes, stdout results, pipeline wiring.

use std::path::Path;
use std::process::{Command, Output};

fn rutfield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rutfield")).args(args).current_dir(dir).output().expect("binary runs")
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rutfield(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(rutfield(dir.path(), &["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(rutfield(dir.path(), &["fit", "--input", "missing.csv"]).status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 3\nnot_a_key = 1\n").unwrap();
    let out = rutfield(dir.path(), &["--config", "run.toml", "lifetime", "--depth", "0", "--rate", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn lifetime_prints_years() {
    let dir = tempfile::tempdir().unwrap();
    let out = rutfield(dir.path(), &["lifetime", "--depth", "0", "--rate", "2", "--threshold", "25"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "12.5\n");
    let out = rutfield(dir.path(), &["lifetime", "--depth", "0", "--rate", "4.67", "--aadt", "4000"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "5.4\n");
    let out = rutfield(dir.path(), &["lifetime", "--depth", "3", "--rate", "-0.1", "--threshold", "25"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "no projected maintenance\n");
}

#[test]
fn spatial_model_selected_on_spatial_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = ["--seed", "3", "simulate", "--output", "sim", "--segments", "200", "--years", "3"];
    assert!(rutfield(d, &sim).status.success());
    let cmp = ["--seed", "3", "compare", "--input", "sim/raw.csv", "--models", "1,4", "--draws", "200"];
    let out = rutfield(d, &cmp);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("variant,dic,waic,neg_loglik,p_d,p_waic,selected"));
    let selected: Vec<&str> = lines.filter(|l| l.ends_with(",true")).collect();
    assert_eq!(selected.len(), 1);
    assert!(selected[0].starts_with("M1,"), "{table}");
}

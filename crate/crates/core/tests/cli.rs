use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn seisnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seisnet")).args(args).output().expect("binary runs")
}

fn run(name: &str, out: &Path, extra: &[&str]) -> Output {
    let s = scenario(name);
    let mut args = vec!["--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    seisnet(&args)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

#[test]
fn finished_run_exits_zero_and_writes_only_under_out() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("desk");
    let o = run("desk", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(root.path()), ["desk"]);
    let files = listing(&out);
    for f in ["manifest.json", "scenario.resolved.json", "convergence.csv", "netsim_stats.json", "velocity_model.f32", "velocity_model.json"] {
        assert!(files.iter().any(|n| n == f), "missing {f} in {files:?}");
    }
    let m = manifest(&out);
    assert_eq!(m["status"], "FINISHED");
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in listed {
        assert!(out.join(f).is_file(), "manifest lists missing {f}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert_eq!(run("desk", &a, &[]).status.code(), Some(0));
    assert_eq!(run("desk", &b, &[]).status.code(), Some(0));
    assert_eq!(listing(&a), listing(&b));
    for f in listing(&a) {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn overrides_and_flags_reach_the_resolved_config() {
    let out = tempfile::tempdir().unwrap();
    let o = run("desk", out.path(), &["--set", "tomo.lambda=20000", "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: Value = serde_json::from_slice(&std::fs::read(out.path().join("scenario.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["tomo"]["lambda"], 20000.0);
    assert_eq!(resolved["seed"], 99);
    let m = manifest(out.path());
    assert_eq!(m["seed"], 99);
    assert_eq!(m["metrics"]["lambda"], 20000.0);
}

#[test]
fn pipeline_flag_wins_over_the_file() {
    let out = tempfile::tempdir().unwrap();
    let o = run("ansi", out.path(), &["--pipeline", "ANSI", "--set", "ansi.virtual_sources=[0,55]"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(out.path())["pipeline"], "ANSI");
    let o = run("desk", out.path(), &["--pipeline", "SONAR"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_configuration_exits_two_naming_the_field() {
    let out = tempfile::tempdir().unwrap();
    let o = run("desk", &out.path().join("x"), &["--set", "network.drop_prob=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("network.drop_prob"));
    assert!(!out.path().join("x").exists());

    let o = run("desk", &out.path().join("x"), &["--set", "grid.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.bogus"));

    let o = seisnet(&["--scenario", "/nonexistent.json", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_run_exits_one_and_still_writes_the_manifest() {
    let out = tempfile::tempdir().unwrap();
    let o = run("desk", out.path(), &["--set", "tomo.stopping.max_rounds=10"]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(out.path());
    assert_eq!(m["status"], "FAILED");
    assert!(m["message"].as_str().unwrap().contains("converge"), "{m}");
    assert!(out.path().join("convergence.csv").is_file());
}

#[test]
fn noise_pipeline_rejects_a_heterogeneous_medium() {
    let out = tempfile::tempdir().unwrap();
    let o = run("desk", out.path(), &["--pipeline", "ANSI"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.checkerboard"));
}

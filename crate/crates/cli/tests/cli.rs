use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MIXED: &str = r#"
n = 200
x0 = -1.0
horizon = 10.0

[rate]
kind = "two-minus-gauss"

[weights]
kind = "uniform"
a = -2.0
b = 3.0

[estimator]
points = [-0.6, -0.4, -0.2, 0.0, 0.2, 0.3, 0.4, 0.5, 0.6]

[simulation]
seed = 4
"#;

fn spikerate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikerate"))
        .args(args)
        .env_remove("SPIKERATE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) -> Output {
    let o = spikerate(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

fn output_digests(m: &serde_json::Value) -> Vec<(String, String)> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_owned(), f["sha256"].as_str().unwrap().to_owned()))
        .collect()
}

fn simulate_into(dir: &TempDir, config: &Path, out: &str) -> PathBuf {
    let out = dir.path().join(out);
    run_ok(&["simulate", "--config", s(config), "--out", s(&out)]);
    out
}

#[test]
fn simulate_then_estimate_small_system() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let out = simulate_into(&dir, &cfg, "run");
    assert!(out.join("events.csv").exists() && out.join("trajectory.bin").exists());
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.lines().count() > 100);
    let m = manifest(&out, "simulate");
    assert_eq!(m["tool"], "spikerate");
    assert_eq!(m["seed"], 4);
    assert!(m["config"].as_str().unwrap().contains("bandwidth_exponent = 0.49"));

    let traj = out.join("trajectory.bin");
    run_ok(&["estimate", "--trajectory", s(&traj), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10, "header plus nine points");
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 9);
    let m = manifest(&out, "estimate");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_population_is_rejected_with_the_invariant() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &MIXED.replace("n = 200", "n = 0"));
    let o = spikerate(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("`n`") && err.contains("n >= 1"), "{err}");
    assert!(!dir.path().join("out").join("events.csv").exists());
    let o = spikerate(&["check-config", "--config", s(&cfg)]);
    assert!(!o.status.success());
}

#[test]
fn same_seed_gives_identical_digests() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let a = simulate_into(&dir, &cfg, "a");
    let b = simulate_into(&dir, &cfg, "b");
    assert_eq!(output_digests(&manifest(&a, "simulate")), output_digests(&manifest(&b, "simulate")));
    let c = dir.path().join("c");
    run_ok(&["simulate", "--config", s(&cfg), "--seed", "5", "--out", s(&c)]);
    assert_ne!(output_digests(&manifest(&a, "simulate")), output_digests(&manifest(&c, "simulate")));
}

#[test]
fn empty_point_list_writes_only_the_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let out = simulate_into(&dir, &cfg, "run");
    run_ok(&["estimate", "--trajectory", s(&out.join("trajectory.bin")), "--points", "", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn point_far_from_the_path_is_degenerate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let out = simulate_into(&dir, &cfg, "run");
    run_ok(&["estimate", "--trajectory", s(&out.join("trajectory.bin")), "--points", "0.0,50", "--out", s(&out)]);
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    let far = &reports[1];
    assert_eq!(far["degenerate"], true);
    assert_eq!(far["estimate"], 0.0);
    assert_eq!(reports[0]["degenerate"], false);
}

#[test]
fn validated_batch_reports_every_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let out = simulate_into(&dir, &cfg, "run");
    run_ok(&["estimate", "--config", s(&cfg), "--trajectory", s(&out.join("trajectory.bin")), "--validate", "--out", s(&out)]);
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 9);
    for r in reports {
        assert!(r["omega"].is_boolean());
        assert_eq!(r["decomposition"]["holds"], true, "{r}");
    }
}

#[test]
fn risk_fixture_passes_its_checks() {
    let dir = TempDir::new().unwrap();
    let mut text = MIXED.replace("n = 200", "n = 1");
    text.push_str("\n[experiment]\nname = \"risk\"\nfixture = [");
    let rows: Vec<String> =
        [500.0f64, 1000.0, 2000.0, 4000.0, 8000.0].iter().map(|n| format!("[{n}, {}]", 2.0 * n.powf(-2.0 / 3.0))).collect();
    text.push_str(&rows.join(", "));
    text.push_str("]\n");
    let cfg = write_config(&dir, "risk.toml", &text);
    let out = dir.path().join("risk");
    run_ok(&["experiment", "--config", s(&cfg), "--check", "--out", s(&out)]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("risk.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    assert!((summary["result"]["slope"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-10);
    assert_eq!(fs::read_to_string(out.join("risk.csv")).unwrap().lines().count(), 6);

    let off = write_config(&dir, "off.toml", &text.replace("name = \"risk\"", "name = \"risk\"\ntarget = -1.0"));
    let o = spikerate(&["experiment", "--config", s(&off), "--check", "--out", s(&dir.path().join("off"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    run_ok(&["experiment", "--config", s(&off), "--out", s(&dir.path().join("off"))]);
}

#[test]
fn clt_at_an_equilibrium_fails() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("flow");
    let cfg = write_config(&dir, "m.toml", MIXED);
    run_ok(&["flow", "--config", s(&cfg), "--out", s(&out)]);
    let eq: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("equilibria.json")).unwrap()).unwrap();
    let root = eq["roots"][0].as_f64().unwrap();
    assert!((root - 0.688_948_734_378_851_4).abs() < 1e-9);
    let text = format!("{MIXED}\n[experiment]\nname = \"clt\"\nx_star = {root:?}\nreplicates = 10\n");
    let clt = write_config(&dir, "clt.toml", &text);
    let o = spikerate(&["experiment", "--config", s(&clt), "--out", s(&dir.path().join("clt"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("degenerate"), "{}", stderr(&o));
}

#[test]
fn unknown_experiment_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "x.toml", &format!("{MIXED}\n[experiment]\nname = \"fig2\"\n"));
    let o = spikerate(&["experiment", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown experiment `fig2`"), "{}", stderr(&o));
}

#[test]
fn replay_reproduces_recorded_digests() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let out = simulate_into(&dir, &cfg, "run");
    run_ok(&["replay", s(&out.join("simulate.manifest.json")), "--out", s(&dir.path().join("again"))]);
    let recorded = dir.path().join("run").join("simulate.manifest.json");
    let mut m = manifest(&out, "simulate");
    m["outputs"][0]["sha256"] = "0".repeat(64).into();
    fs::write(&recorded, serde_json::to_string(&m).unwrap()).unwrap();
    let o = spikerate(&["replay", s(&recorded), "--out", s(&dir.path().join("third"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH events.csv"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let text = format!("{MIXED}\n[experiment]\nname = \"strong\"\nns = [100, 200]\nreplicates = 6\nprobes = 50\n");
    let cfg = write_config(&dir, "strong.toml", &text);
    let digests: Vec<_> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = dir.path().join(format!("t{t}"));
            run_ok(&["experiment", "--config", s(&cfg), "--threads", t, "--out", s(&out)]);
            output_digests(&manifest(&out, "experiment"))
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn out_dir_comes_from_the_environment_unless_given() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let env_dir = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_spikerate"))
        .args(["flow", "--config", s(&cfg)])
        .env("SPIKERATE_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("flow.csv").exists());
    let flag_dir = dir.path().join("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_spikerate"))
        .args(["flow", "--config", s(&cfg), "--out", s(&flag_dir)])
        .env("SPIKERATE_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_dir.join("flow.csv").exists());
}

#[test]
fn malformed_trajectory_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "m.toml", MIXED);
    let bogus = dir.path().join("bogus.bin");
    fs::write(&bogus, b"not a trajectory").unwrap();
    let o = spikerate(&["estimate", "--config", s(&cfg), "--trajectory", s(&bogus), "--out", s(&dir.path().join("e"))]);
    assert!(!o.status.success());
    let out = simulate_into(&dir, &cfg, "run");
    let mut bytes = fs::read(out.join("trajectory.bin")).unwrap();
    bytes.truncate(bytes.len() - 5);
    let cut = dir.path().join("cut.bin");
    fs::write(&cut, bytes).unwrap();
    let o = spikerate(&["estimate", "--config", s(&cfg), "--trajectory", s(&cut), "--out", s(&dir.path().join("e"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}

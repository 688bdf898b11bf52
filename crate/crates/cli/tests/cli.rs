use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn geoflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .args(args)
        .current_dir(dir)
        .env("GEOFLOW_OUT", dir.join("out"))
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn generate(dir: &Path, stem: &str, n: &str, seed: &str) {
    let out = geoflow(
        dir,
        &["generate-data", "--n-traj", n, "--nx", "33", "--nt", "11", "--seed", seed, "--out", stem],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn train_small(dir: &Path, kind: &str, run: &str) -> PathBuf {
    let out = geoflow(
        dir,
        &[
            "train", "--kind", kind, "--dataset", "train", "--steps", "6", "--log-every", "3", "--batch-size", "8", "--out", run,
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(run)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_trajectories_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geoflow(tmp.path(), &["generate-data", "--n-traj", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn default_mesh_is_201_by_201_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geoflow(tmp.path(), &["generate-data", "--n-traj", "1"]);
    assert_eq!(code(&out), 0);
    let stem = tmp.path().join("out/data/burgers");
    let meta = read_json(&stem.with_extension("meta.json"));
    assert_eq!(meta["n_x"], 201);
    assert_eq!(meta["n_t"], 201);
    assert_eq!(meta["n_traj"], 1);
    assert!(stem.with_extension("f64bin").exists());
    let manifest = read_json(&stem.with_extension("manifest.json"));
    assert_eq!(manifest["command"], "generate-data");
    assert_eq!(manifest["config"]["mesh"]["n_x"], 201);
}

#[test]
fn regenerating_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "a", "3", "5");
    let first = (fs::read(tmp.path().join("a.f64bin")).unwrap(), fs::read(tmp.path().join("a.meta.json")).unwrap());
    generate(tmp.path(), "a", "3", "5");
    let second = (fs::read(tmp.path().join("a.f64bin")).unwrap(), fs::read(tmp.path().join("a.meta.json")).unwrap());
    assert_eq!(first, second);
}

#[test]
fn unknown_flags_are_rejected_and_help_exists() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&geoflow(tmp.path(), &["train", "--bogus"])), 2);
    assert_eq!(code(&geoflow(tmp.path(), &["verify", "--suite", "nonsense"])), 2);
    for cmd in ["generate-data", "train", "verify", "evaluate", "plot"] {
        let out = geoflow(tmp.path(), &[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).contains("Usage"));
    }
    assert!(!stdout(&geoflow(tmp.path(), &["verify", "--help"])).contains("tolerance-scale"));
}

#[test]
fn train_config_validation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "2", "1");
    let cases = [
        r#"{"spec": {"kind": "gauss-path"}, "dataset": "train", "steps": 2, "seed": 0, "intrinsic_dim": 3}"#,
        r#"{"spec": {"kind": "second-ff"}, "dataset": "train", "steps": 2, "seed": 0, "intrinsic_dim": 2}"#,
        r#"{"spec": {"kind": "sphere"}, "dataset": "train", "steps": 2, "seed": 0, "typo_key": 1}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("bad{i}.json"));
        fs::write(&path, text).unwrap();
        let out = geoflow(tmp.path(), &["train", "--config", path.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = geoflow(tmp.path(), &["train", "--kind", "perelman", "--intrinsic-dim", "2", "--dataset", "train"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sphere_log_has_no_flow_column_and_flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "3", "1");
    let config = tmp.path().join("sphere.json");
    fs::write(
        &config,
        r#"{"spec": {"kind": "sphere"}, "dataset": "train", "steps": 100, "seed": 4, "batch_size": 8, "log_every": 2}"#,
    )
    .unwrap();
    let out = geoflow(tmp.path(), &["train", "--config", "sphere.json", "--steps", "4", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed = stdout(&out);
    assert_eq!(printed.lines().filter(|l| l.starts_with("step")).count(), 2);
    assert!(printed.contains("recon") && !printed.contains("flow"));
    let log = fs::read_to_string(tmp.path().join("run/train.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let record: Value = serde_json::from_str(line).unwrap();
        assert!(record.get("flow").is_none());
        assert!(record.get("recon").is_some());
    }
    let manifest = read_json(&tmp.path().join("run/train.manifest.json"));
    assert_eq!(manifest["config"]["steps"], 4);
    assert_eq!(manifest["config"]["seed"], 4);
    assert!(tmp.path().join("run/final/manifest.json").exists());
}

#[test]
fn non_finite_loss_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "2", "1");
    let out = geoflow(
        tmp.path(),
        &[
            "train", "--kind", "baseline", "--dataset", "train", "--steps", "5", "--batch-size", "4", "--learning-rate", "1e200",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rerunning_a_training_manifest_reproduces_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "3", "1");
    let first = train_small(tmp.path(), "lambda-baseline", "a");
    let manifest = read_json(&first.join("train.manifest.json"));
    let config = tmp.path().join("from-manifest.json");
    fs::write(&config, serde_json::to_string(&manifest["config"]).unwrap()).unwrap();
    let out = geoflow(tmp.path(), &["train", "--config", "from-manifest.json", "--out", "b"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = |run: &str| fs::read(tmp.path().join(run).join("train.log.jsonl")).unwrap();
    assert_eq!(log("a"), log("b"));
}

#[test]
fn verify_geometry_passes_and_tampering_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geoflow(tmp.path(), &["verify", "--suite", "geometry", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let table = stdout(&out);
    assert!(table.contains("PASS") && !table.contains("FAIL"));
    assert!(table.contains("sphere-scalar-curvature"));
    assert!(tmp.path().join("out/verify/verify.manifest.json").exists());

    let out = geoflow(tmp.path(), &["verify", "--suite", "geometry", "--tolerance-scale", "0"]);
    assert_ne!(code(&out), 0);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn evaluate_and_plot_two_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "train", "3", "1");
    generate(tmp.path(), "eval", "2", "2");
    let a = train_small(tmp.path(), "baseline", "base");
    let b = train_small(tmp.path(), "sphere", "sph");
    let ckpts = [a.join("final"), b.join("final")];
    let ckpts: Vec<&str> = ckpts.iter().map(|p| p.to_str().unwrap()).collect();

    let run = |out_dir: &str, seed: &str| {
        geoflow(
            tmp.path(),
            &["evaluate", "--checkpoints", ckpts[0], ckpts[1], "--data", "eval", "--seed", seed, "--out", out_dir],
        )
    };
    let out = run("report", "0");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("report/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 18);
    assert!(tmp.path().join("report/evaluate.manifest.json").exists());

    let again = run("report2", "0");
    assert_eq!(code(&again), 0);
    assert_eq!(csv, fs::read_to_string(tmp.path().join("report2/report.csv")).unwrap());

    assert_eq!(code(&run("mismatch", "0,1")), 2);

    let out = geoflow(tmp.path(), &["plot", "--report", "report", "--out", "plots"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(tmp.path().join("plots")).unwrap().count(), 10);
    assert!(tmp.path().join("plots.manifest.json").exists());
}

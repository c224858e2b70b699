//! End-to-end runs of the `aligned` binary on a small synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aligned_cli::RunManifest;

const GEN: &str = r#"{"world": {"concepts": 3, "seed": 11, "image_size": 8, "output_dim": 10}, "pairs": 30, "splits": {"validation": 0, "test": 12}}"#;
const TRAIN: &str = r#"{"network": {"kind": "custom", "spec": NETWORK}, "train": {"seed": 5, "iterations": 6, "batch_size": 4, "learning_rate": 0.001}}"#;
const EVAL: &str = r#"{"seed": 1, "retrieval": {"n_splits": 2, "split_size": 10}, "probe_k": 3, "svm": {"iterations": 50}}"#;

/// Small network over 8×8 images.
const NETWORK: &str = r#"{
  "vision": {"input_shape": [3, 8, 8], "layers": [
    {"kind": "conv2d", "filters": 4, "kernel": 3}, {"kind": "relu"},
    {"kind": "max_pool2d", "window": 2, "stride": 2}, {"kind": "fc", "units": 16}, {"kind": "relu"}]},
  "sound": {"input_shape": [257, 500], "layers": [
    {"kind": "conv1d", "filters": 4, "kernel": 3}, {"kind": "relu"},
    {"kind": "max_pool1d", "factor": 25}, {"kind": "fc", "units": 16}, {"kind": "relu"}]},
  "text": {"input_shape": [300, 16], "layers": [
    {"kind": "conv1d", "filters": 4, "kernel": 3}, {"kind": "relu"},
    {"kind": "max_pool1d", "factor": 4}, {"kind": "fc", "units": 16}, {"kind": "relu"}]},
  "shared": [{"kind": "fc", "units": 12}, {"kind": "relu"}, {"kind": "fc", "units": 12}, {"kind": "relu"},
    {"kind": "fc", "units": 10}, {"kind": "softmax"}],
  "bottleneck_dim": 16,
  "output_dim": 10
}"#;

fn aligned(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aligned")).args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("gen.json"), GEN).unwrap();
        std::fs::write(root.join("train.json"), TRAIN.replace("NETWORK", NETWORK)).unwrap();
        std::fs::write(root.join("eval.json"), EVAL).unwrap();
        Run { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }

    fn gen(&self, out: &str) {
        ok(aligned(&["gen-data", "--config", &self.p("gen.json"), "--out", &self.p(out)]));
    }

    fn train(&self, data: &str, out: &str) {
        let manifest = format!("{}/manifest.csv", self.p(data));
        ok(aligned(&["train", "--config", &self.p("train.json"), "--data", &manifest, "--out", &self.p(out)]));
    }

    fn eval(&self, data: &str, run: &str, out: &str, tasks: Option<&str>) -> Output {
        let manifest = format!("{}/manifest.csv", self.p(data));
        let checkpoint = format!("{}/checkpoint", self.p(run));
        let mut args = vec![
            "eval", "--config", &self.root.join("eval.json").to_str().unwrap().to_owned(),
        ]
        .into_iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
        args.extend(["--data", &manifest, "--checkpoint", &checkpoint, "--out", &self.p(out)].map(str::to_owned));
        if let Some(t) = tasks {
            args.extend(["--tasks".to_owned(), t.to_owned()]);
        }
        aligned(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().count()
}

#[test]
fn full_pipeline_and_bitwise_rerun() {
    let run = Run::new();
    run.gen("data");
    assert_eq!(count_files(&run.root.join("data/samples")), 90);
    run.train("data", "run");
    let loss = std::fs::read_to_string(run.root.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 6);
    ok(run.eval("data", "run", "ev", None));

    let ranks = std::fs::read_to_string(run.root.join("ev/ranks.csv")).unwrap();
    for task in ["retrieval", "bridge", "baseline"] {
        assert!(ranks.lines().any(|l| l.starts_with(task)), "{task} missing");
    }
    let accs = std::fs::read_to_string(run.root.join("ev/accuracies.csv")).unwrap();
    assert_eq!(accs.lines().count(), 1 + 9);
    // k rows per unit and modality over the 12 last-hidden units.
    let probes = std::fs::read_to_string(run.root.join("ev/probes.csv")).unwrap();
    assert_eq!(probes.lines().count(), 1 + 12 * 3 * 3);

    for (src, dst) in [("data", "data2"), ("run", "run2"), ("ev", "ev2")] {
        let manifest = run.p(&format!("{src}/run_manifest.json"));
        let out = ok(aligned(&["rerun", "--manifest", &manifest, "--out", &run.p(dst)]));
        assert!(String::from_utf8_lossy(&out.stdout).contains("reproduced bitwise"));
        let a = RunManifest::read(Path::new(&manifest)).unwrap();
        let b = RunManifest::read(&run.root.join(dst).join("run_manifest.json")).unwrap();
        assert!(a.differences(&b).is_empty());
        assert!(!a.artifacts.is_empty());
    }

    // Every artifact is recorded relative to, and lives under, its output directory.
    for dir in ["data", "run", "ev"] {
        let m = RunManifest::read(&run.root.join(dir).join("run_manifest.json")).unwrap();
        for a in &m.artifacts {
            assert!(a.path.is_relative(), "{}", a.path.display());
            assert!(run.root.join(dir).join(&a.path).is_file());
        }
    }
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let run = Run::new();
    run.gen("data");
    run.train("data", "straight");
    let three = TRAIN.replace("NETWORK", NETWORK).replace("\"iterations\": 6", "\"iterations\": 3");
    std::fs::write(run.root.join("three.json"), three).unwrap();
    let manifest = run.p("data/manifest.csv");
    ok(aligned(&["train", "--config", &run.p("three.json"), "--data", &manifest, "--out", &run.p("first")]));
    ok(aligned(&[
        "train", "--config", &run.p("train.json"), "--data", &manifest, "--out", &run.p("second"),
        "--checkpoint", &run.p("first/checkpoint"),
    ]));
    let a = RunManifest::read(&run.root.join("straight/run_manifest.json")).unwrap();
    let b = RunManifest::read(&run.root.join("second/run_manifest.json")).unwrap();
    let digest = |m: &RunManifest| {
        m.artifacts
            .iter()
            .filter(|x| x.path.starts_with("checkpoint"))
            .map(|x| (x.path.clone(), x.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn unknown_task_lists_the_valid_ones() {
    let run = Run::new();
    let out = run.eval("data", "run", "ev", Some("retrieval,telepathy"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for t in ["retrieval", "bridge", "zero-shot", "baseline", "probe"] {
        assert!(err.contains(t), "{err}");
    }
}

#[test]
fn zero_shot_without_labels_is_a_config_error() {
    let run = Run::new();
    run.gen("data");
    run.train("data", "run");
    std::fs::remove_file(run.root.join("data/labels.csv")).unwrap();
    let out = run.eval("data", "run", "ev", Some("zero-shot"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero-shot"));
    // Tasks that need no labels still run.
    ok(run.eval("data", "run", "ev2", Some("retrieval")));
}

#[test]
fn bad_configs_are_rejected() {
    let run = Run::new();
    std::fs::write(run.root.join("bad.json"), r#"{"seed": 1, "bogus": 2}"#).unwrap();
    run.gen("data");
    run.train("data", "run");
    std::fs::copy(run.root.join("bad.json"), run.root.join("eval.json")).unwrap();
    let out = run.eval("data", "run", "ev", None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let missing = aligned(&["gen-data", "--config", &run.p("nope.json"), "--out", &run.p("x")]);
    assert_ne!(missing.status.code(), Some(0));
}

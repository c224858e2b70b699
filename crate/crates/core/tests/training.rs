//! Adam against a closed form, checkpoints, resume and determinism.

mod common;

use std::collections::BTreeMap;

use aligned_core::data::{SyntheticCorpus, SyntheticWorld, TeacherTargets, TrainingPair};
use aligned_core::encoders::{bitwise_eq, init_params, ModelParams};
use aligned_core::training::{
    adam_step, load_checkpoint, load_checkpoint_for, resume, save_checkpoint, train, write_loss_csv,
    AdamConfig, OptimizerState, TrainConfig, TrainState, TrainingData,
};
use aligned_core::CoreError;
use aligned_tensor::Tensor;
use common::tiny_spec;

fn corpus() -> (SyntheticCorpus, Vec<TrainingPair>, TeacherTargets) {
    let mut world = SyntheticWorld::new(3, 21);
    world.image_size = 8;
    world.output_dim = 5;
    let corpus = world.generate(12).unwrap();
    let pairs = corpus.index(None).unwrap().training_pairs(None);
    let teacher = corpus.teacher().unwrap();
    (corpus, pairs, teacher)
}

fn config(iterations: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        iterations,
        init_sigma: 0.1,
        ..TrainConfig::paper(17)
    }
}

fn params_equal(a: &ModelParams, b: &ModelParams) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((n, x), (m, y))| n == m && bitwise_eq(x, y))
}

/// Scalar Adam recurrence written out independently.
fn adam_oracle(p0: f64, grads: &[f64], cfg: &AdamConfig) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as f64;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powf(t));
        let vh = v / (1.0 - cfg.beta2.powf(t));
        p -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
    }
    p
}

#[test]
fn adam_matches_closed_form_over_ten_steps() {
    let spec = tiny_spec();
    let cfg = AdamConfig {
        learning_rate: 1e-2,
        ..AdamConfig::default()
    };
    let mut params = init_params(&spec, 3, 0.1).unwrap();
    let name = "shared.fc3.bias".to_string();
    let start = params.get(&name).unwrap().clone();
    let mut state = OptimizerState::new();
    let schedule: Vec<Vec<f64>> = (0..10)
        .map(|t| (0..5).map(|i| ((t * 5 + i) as f64 * 0.37).sin() * (1.0 + i as f64)).collect())
        .collect();
    for g in &schedule {
        let grads = BTreeMap::from([(name.clone(), Tensor::new(vec![5], g.clone()).unwrap())]);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    }
    assert_eq!(state.step, 10);
    for i in 0..5 {
        let gi: Vec<f64> = schedule.iter().map(|g| g[i]).collect();
        let expected = adam_oracle(start.data()[i], &gi, &cfg);
        assert!((params.get(&name).unwrap().data()[i] - expected).abs() < 1e-12);
    }

    // Constant gradient: every bias-corrected step is lr·g/(|g|+ε).
    let mut params = init_params(&spec, 3, 0.1).unwrap();
    let mut state = OptimizerState::new();
    let g = Tensor::full(&[5], -0.25);
    for _ in 0..10 {
        adam_step(&mut params, &BTreeMap::from([(name.clone(), g.clone())]), &mut state, &cfg).unwrap();
    }
    let step = cfg.learning_rate * 0.25 / (0.25 + cfg.epsilon);
    for (p, s) in params.get(&name).unwrap().data().iter().zip(start.data()) {
        assert!((p - (s + 10.0 * step)).abs() < 1e-12);
    }
}

#[test]
fn adam_leaves_untouched_parameters_alone() {
    let spec = tiny_spec();
    let mut params = init_params(&spec, 3, 0.1).unwrap();
    let before = params.clone();
    let mut state = OptimizerState::new();
    let grads = BTreeMap::from([("shared.fc1.bias".to_string(), Tensor::full(&[16], 1.0))]);
    adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
    for (name, t) in before.iter() {
        if name != "shared.fc1.bias" {
            assert!(bitwise_eq(t, params.get(name).unwrap()), "{name} moved");
        }
    }
    assert_eq!(state.first.len(), 1);
    let bad = BTreeMap::from([("shared.fc1.bias".to_string(), Tensor::full(&[17], 1.0))]);
    assert!(adam_step(&mut params, &bad, &mut state, &AdamConfig::default()).is_err());
    assert_eq!(state.step, 1, "a rejected update must not advance the step");
}

#[test]
fn training_is_deterministic_and_logs_every_iteration() {
    let (corpus, pairs, teacher) = corpus();
    let data = TrainingData {
        pairs: &pairs,
        source: &corpus,
        teacher: Some(&teacher),
    };
    let a = train(&tiny_spec(), data, &config(6), None).unwrap();
    let b = train(&tiny_spec(), data, &config(6), None).unwrap();
    assert!(params_equal(&a.state.params, &b.state.params));
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.trajectory.len(), 6);
    let types: Vec<_> = a.trajectory.iter().map(|r| r.pair_type).collect();
    assert_ne!(types[0], types[1]);
    assert_eq!(types[0], types[2]);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("loss.csv");
    write_loss_csv(&csv, &a.trajectory).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().next().unwrap(), "iteration,total,kl_term,ranking_term");
}

#[test]
fn resumed_training_splices_onto_an_uninterrupted_run() {
    let (corpus, pairs, teacher) = corpus();
    let data = TrainingData {
        pairs: &pairs,
        source: &corpus,
        teacher: Some(&teacher),
    };
    let straight = train(&tiny_spec(), data, &config(8), None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = train(&tiny_spec(), data, &config(3), None).unwrap();
    save_checkpoint(dir.path(), &first.state).unwrap();
    let restored = load_checkpoint(dir.path()).unwrap();
    assert_eq!(restored, first.state);
    let second = resume(restored, data, &config(8), None).unwrap();

    for ((name, a), (_, b)) in straight.state.params.iter().zip(second.state.params.iter()) {
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12, "{name} differs by {diff}");
    }
    assert!(params_equal(&straight.state.params, &second.state.params));
    let mut spliced = first.trajectory.clone();
    spliced.extend(second.trajectory);
    assert_eq!(spliced, straight.trajectory);
}

#[test]
fn intermediate_checkpoints_are_written() {
    let (corpus, pairs, teacher) = corpus();
    let data = TrainingData {
        pairs: &pairs,
        source: &corpus,
        teacher: Some(&teacher),
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..config(4)
    };
    let out = train(&tiny_spec(), data, &cfg, Some(dir.path())).unwrap();
    let at4 = load_checkpoint(&dir.path().join("step_000004")).unwrap();
    assert_eq!(at4, out.state);
    assert_eq!(load_checkpoint(&dir.path().join("step_000002")).unwrap().optimizer.step, 2);
}

#[test]
fn checkpoint_mismatch_and_missing_blob_are_reported() {
    let spec = tiny_spec();
    let state = TrainState {
        params: init_params(&spec, 4, 0.1).unwrap(),
        optimizer: OptimizerState::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &state).unwrap();
    assert_eq!(load_checkpoint_for(dir.path(), &spec).unwrap(), state);

    let mut other = tiny_spec();
    other.shared[0] = aligned_core::encoders::Layer::Fc { units: 17 };
    let err = load_checkpoint_for(dir.path(), &other).unwrap_err();
    assert!(matches!(err, CoreError::Config(ref m) if m.contains("shared.fc1.weight")), "{err}");

    std::fs::remove_file(dir.path().join("vision.conv1.bias.tnsr")).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    match err {
        CoreError::Io { path, source } => {
            assert!(path.ends_with("vision.conv1.bias.tnsr"));
            assert!(source.to_string().contains("vision.conv1.bias"));
        }
        other => panic!("expected an I/O error, got {other}"),
    }
}

#[test]
fn missing_teacher_is_rejected_before_training() {
    let (corpus, pairs, _) = corpus();
    let data = TrainingData {
        pairs: &pairs,
        source: &corpus,
        teacher: None,
    };
    let err = train(&tiny_spec(), data, &config(2), None).err().unwrap();
    assert!(matches!(err, CoreError::Config(_)));
}

use std::path::{Path, PathBuf};

use aligned_core::data::{make_splits, synthetic::pair_id, FileDataset, Modality, SampleSource};
use aligned_core::evaluation::{
    accuracy, bridge_transfer_eval, cross_modal_retrieval, embed_pairs, fit_selected, last_hidden_tap,
    linear_regression_baseline, probe_units, AccuracyRow, EvalReport, RetrievalRow, ZeroShotResult,
};
use aligned_core::training::{
    load_checkpoint, load_checkpoint_for, resume, save_checkpoint, train, write_loss_csv, TrainState,
    TrainingData,
};
use aligned_core::{CoreError, Result};
use clap::ValueEnum;

use crate::config::{parse_config, read_config, EvalConfig, GenDataConfig, TrainJob};
use crate::manifest::{artifacts, files_under, now, RunManifest};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const INTERMEDIATE_DIR: &str = "checkpoints";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Task {
    Retrieval,
    Bridge,
    ZeroShot,
    Baseline,
    Probe,
}

impl Task {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }

    pub fn parse(s: &str) -> Result<Task> {
        Task::from_str(s, false).map_err(|_| {
            let valid: Vec<String> = Task::value_variants().iter().map(|t| t.name()).collect();
            CoreError::config(format!("unknown task {s:?}; valid tasks: {}", valid.join(", ")))
        })
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CoreError::io(p, e))
}

fn create_out(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    absolute(out)
}

fn manifest_for(command: &str, config_path: &Path, config: serde_json::Value, seed: u64, out: &Path) -> Result<RunManifest> {
    Ok(RunManifest {
        command: command.into(),
        config_path: absolute(config_path)?,
        config,
        seed,
        data: None,
        checkpoint: None,
        tasks: Vec::new(),
        out: out.to_path_buf(),
        timestamp: now(),
        artifacts: Vec::new(),
    })
}

pub fn gen_data(config_path: &Path, out: &Path) -> Result<RunManifest> {
    let (_, value) = read_config::<GenDataConfig>(config_path)?;
    gen_data_from(config_path, value, out)
}

pub fn gen_data_from(config_path: &Path, value: serde_json::Value, out: &Path) -> Result<RunManifest> {
    let cfg: GenDataConfig = parse_config(&value)?;
    let out = create_out(out)?;
    let corpus = cfg.world.generate(cfg.pairs)?;
    let ids: Vec<String> = (0..cfg.pairs).map(pair_id).collect();
    let splits = make_splits(&ids, cfg.world.seed, cfg.splits)?;
    let written = corpus.write_dataset(&out, Some(&splits))?;
    let mut m = manifest_for("gen-data", config_path, value, cfg.world.seed, &out)?;
    m.artifacts = artifacts(&out, &written)?;
    m.write()?;
    Ok(m)
}

pub fn train_cmd(config_path: &Path, data: &Path, out: &Path, checkpoint: Option<&Path>) -> Result<RunManifest> {
    let (_, value) = read_config::<TrainJob>(config_path)?;
    train_from(config_path, value, data, out, checkpoint)
}

pub fn train_from(
    config_path: &Path,
    value: serde_json::Value,
    data: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<RunManifest> {
    let job: TrainJob = parse_config(&value)?;
    let spec = job.network.spec()?;
    job.train.validate()?;
    let dataset = FileDataset::open(data)?;
    let pairs = dataset.index().training_pairs(Some(&job.split));
    if pairs.is_empty() {
        return Err(CoreError::config(format!("split {:?} has no training pairs", job.split)));
    }
    let out = create_out(out)?;
    let data_in = TrainingData {
        pairs: &pairs,
        source: &dataset,
        teacher: dataset.index().teacher.as_ref(),
    };
    let intermediate = out.join(INTERMEDIATE_DIR);
    let outcome = match checkpoint {
        Some(dir) => {
            let state: TrainState = load_checkpoint_for(dir, &spec)?;
            resume(state, data_in, &job.train, Some(&intermediate))?
        }
        None => train(&spec, data_in, &job.train, Some(&intermediate))?,
    };
    let final_dir = out.join(CHECKPOINT_DIR);
    save_checkpoint(&final_dir, &outcome.state)?;
    write_loss_csv(&out.join(LOSS_FILE), &outcome.trajectory)?;

    let mut written = files_under(&out, &final_dir)?;
    if intermediate.exists() {
        written.extend(files_under(&out, &intermediate)?);
    }
    written.push(PathBuf::from(LOSS_FILE));
    let mut m = manifest_for("train", config_path, value, job.train.seed, &out)?;
    m.data = Some(absolute(data)?);
    m.checkpoint = checkpoint.map(absolute).transpose()?;
    m.artifacts = artifacts(&out, &written)?;
    m.write()?;
    Ok(m)
}

pub fn eval_cmd(config_path: &Path, data: &Path, checkpoint: &Path, out: &Path, tasks: &[Task]) -> Result<RunManifest> {
    let (_, value) = read_config::<EvalConfig>(config_path)?;
    eval_from(config_path, value, data, checkpoint, out, tasks)
}

fn pairs_of(dataset: &FileDataset, split: &str) -> Result<Vec<String>> {
    let ids = dataset.index().pair_ids(Some(split));
    if ids.is_empty() {
        return Err(CoreError::config(format!("split {split:?} has no pairs")));
    }
    Ok(ids)
}

pub fn eval_from(
    config_path: &Path,
    value: serde_json::Value,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    tasks: &[Task],
) -> Result<RunManifest> {
    let cfg: EvalConfig = parse_config(&value)?;
    let mut tasks = tasks.to_vec();
    if tasks.is_empty() {
        tasks = Task::value_variants().to_vec();
    }
    tasks.sort();
    tasks.dedup();
    let state = match &cfg.network {
        Some(n) => load_checkpoint_for(checkpoint, &n.spec()?)?,
        None => load_checkpoint(checkpoint)?,
    };
    let params = &state.params;
    let dataset = FileDataset::open(data)?;
    let index = dataset.index();
    let source: &dyn SampleSource = &dataset;
    let tap = cfg.tap.unwrap_or_else(|| last_hidden_tap(params));
    let opts = cfg.retrieval_options();
    let eval_pairs = pairs_of(&dataset, &cfg.split)?;
    let out = create_out(out)?;

    let mut report = EvalReport::new(value.clone());
    report.tasks = tasks.iter().map(|t| t.name()).collect();
    for &task in &tasks {
        let name = task.name();
        match task {
            Task::Retrieval => {
                for partner in [Modality::Sound, Modality::Text] {
                    let both = cross_modal_retrieval(params, source, index, &eval_pairs, (Modality::Image, partner), tap, &opts)?;
                    report.retrieval.extend(both.iter().map(|r| RetrievalRow::new(&name, r)));
                }
            }
            Task::Bridge => {
                let both = bridge_transfer_eval(params, source, index, &eval_pairs, tap, &opts)?;
                report.retrieval.extend(both.iter().map(|r| RetrievalRow::new(&name, r)));
            }
            Task::Baseline => {
                let train_pairs = pairs_of(&dataset, &cfg.train_split)?;
                let rows = linear_regression_baseline(source, index, &train_pairs, &eval_pairs, &cfg.ridge, &opts)?;
                report.retrieval.extend(rows.iter().map(|r| RetrievalRow::new(&name, r)));
            }
            Task::ZeroShot => {
                let train_pairs = pairs_of(&dataset, &cfg.train_split)?;
                let train_labels = index.labels_for(&train_pairs, &name)?;
                let test_labels = index.labels_for(&eval_pairs, &name)?;
                let classes = cfg
                    .classes
                    .unwrap_or_else(|| train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1));
                let tests = Modality::ALL
                    .iter()
                    .map(|&m| embed_pairs(params, source, index, &eval_pairs, m, tap))
                    .collect::<Result<Vec<_>>>()?;
                for train_m in Modality::ALL {
                    let x = embed_pairs(params, source, index, &train_pairs, train_m, tap)?;
                    let (model, chosen_c, cv_accuracy) = fit_selected(&x, &train_labels, classes, &cfg.svm)?;
                    for (test_m, test_x) in Modality::ALL.into_iter().zip(&tests) {
                        let r = ZeroShotResult {
                            accuracy: accuracy(&model.predict(test_x)?, &test_labels),
                            chosen_c,
                            cv_accuracy: cv_accuracy.clone(),
                        };
                        report.accuracies.push(AccuracyRow::new(&name, train_m, test_m, classes, &r));
                    }
                }
            }
            Task::Probe => {
                report.probes = probe_units(params, source, index, &eval_pairs, &Modality::ALL, tap, cfg.probe_k)?;
            }
        }
    }
    let written = report.write(&out)?;
    let rel: Vec<PathBuf> = written
        .iter()
        .map(|p| p.strip_prefix(&out).expect("report lands in out").to_path_buf())
        .collect();
    let mut m = manifest_for("eval", config_path, value, cfg.seed, &out)?;
    m.data = Some(absolute(data)?);
    m.checkpoint = Some(absolute(checkpoint)?);
    m.tasks = report.tasks.clone();
    m.artifacts = artifacts(&out, &rel)?;
    m.write()?;
    Ok(m)
}

/// Re-executes a recorded run into `out` and lists artifacts that differ.
pub fn rerun(manifest: &Path, out: &Path) -> Result<(RunManifest, Vec<PathBuf>)> {
    let old = RunManifest::read(manifest)?;
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| CoreError::data(format!("{} lacks the {what} path", manifest.display())))
    };
    let new = match old.command.as_str() {
        "gen-data" => gen_data_from(&old.config_path, old.config.clone(), out)?,
        "train" => train_from(
            &old.config_path,
            old.config.clone(),
            &need(&old.data, "data")?,
            out,
            old.checkpoint.as_deref(),
        )?,
        "eval" => {
            let tasks = old.tasks.iter().map(|t| Task::parse(t)).collect::<Result<Vec<_>>>()?;
            eval_from(
                &old.config_path,
                old.config.clone(),
                &need(&old.data, "data")?,
                &need(&old.checkpoint, "checkpoint")?,
                out,
                &tasks,
            )?
        }
        other => return Err(CoreError::data(format!("unknown recorded command {other:?}"))),
    };
    let diff = old.differences(&new);
    Ok((new, diff))
}

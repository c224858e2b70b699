//! Adam, the deterministic training loop and checkpoints.

mod checkpoint;
mod optimizer;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use aligned_tensor::Tensor;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, TrainState, CHECKPOINT_MANIFEST};
pub use optimizer::{adam_step, AdamConfig, OptimizerState};

use crate::data::{BatchPlan, PairType, SampleSource, TeacherTargets, TrainingPair};
use crate::encoders::{fnv1a, init_params, NetworkSpec};
use crate::error::{CoreError, IoContext, Result};
use crate::losses::{combined_loss, LossConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Required: every run is reproducible from its configuration.
    pub seed: u64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    /// Standard deviation of the Gaussian weight initialization.
    #[serde(default = "defaults::init_sigma")]
    pub init_sigma: f64,
    /// Write an intermediate checkpoint every this many iterations (0 = never).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub loss: LossConfig,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn batch_size() -> usize {
        200
    }
    pub fn iterations() -> usize {
        50_000
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
    pub fn init_sigma() -> f64 {
        0.01
    }
}

impl TrainConfig {
    /// Full-scale settings: Adam at 1e-4, batches of 200, 50,000 iterations.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            seed,
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            iterations: defaults::iterations(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            epsilon: defaults::epsilon(),
            init_sigma: defaults::init_sigma(),
            checkpoint_every: 0,
            loss: LossConfig::default(),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size < 2 {
            return Err(CoreError::config("batch_size must be at least 2"));
        }
        if self.iterations == 0 {
            return Err(CoreError::config("iterations must be at least 1"));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return Err(CoreError::config("init_sigma must be positive"));
        }
        self.loss.validate()
    }
}

/// Everything the loop reads: pairs, where to load samples from, and the
/// teacher rows (required when the KL term is on).
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub pairs: &'a [TrainingPair],
    pub source: &'a dyn SampleSource,
    pub teacher: Option<&'a TeacherTargets>,
}

/// Loss values of one iteration (1-based).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub pair_type: PairType,
    pub total: f64,
    pub kl_term: f64,
    pub ranking_term: f64,
    /// L2 norm of the gradient over shared-trunk parameters.
    pub shared_grad_norm: f64,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub trajectory: Vec<LossRecord>,
}

/// Initializes parameters from `cfg` and trains for `cfg.iterations`.
pub fn train(
    spec: &NetworkSpec,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = TrainState {
        params: init_params(spec, cfg.seed, cfg.init_sigma)?,
        optimizer: OptimizerState::new(),
    };
    resume(state, data, cfg, checkpoint_dir)
}

/// Continues from `state` (its step counter) up to `cfg.iterations`.
pub fn resume(
    mut state: TrainState,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(CoreError::config("training data is empty"));
    }
    if cfg.loss.kl_enabled() && data.teacher.is_none() {
        return Err(CoreError::config("KL transfer is enabled but no teacher targets were given"));
    }
    let teacher = data.teacher.filter(|_| cfg.loss.kl_enabled());
    let plan = BatchPlan::new(data.pairs, cfg.batch_size, cfg.seed)?;
    let adam = cfg.adam();
    let start = state.optimizer.step as usize;
    let mut trajectory = Vec::with_capacity(cfg.iterations.saturating_sub(start));

    for step in start..cfg.iterations {
        let iteration = step + 1;
        let batch = plan.load(step, data.pairs, data.source, teacher)?;
        let negative_seed = cfg.seed ^ fnv1a(&(step as u64).to_le_bytes());
        let lg = combined_loss(&batch, &state.params, &cfg.loss, negative_seed).map_err(|e| at_iteration(e, iteration))?;
        check_terms(&lg.breakdown, iteration)?;
        let mut grads = lg.graph.backward(lg.total)?;
        let mut named: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut shared_sq = 0.0;
        for (name, var) in &lg.params {
            let g = grads.take(*var).expect("every bound parameter receives a gradient");
            if !g.is_finite() {
                return Err(CoreError::NumericAbort {
                    iteration,
                    term: format!("gradient of {name}"),
                    detail: "non-finite gradient".into(),
                });
            }
            if name.starts_with("shared.") {
                shared_sq += g.data().iter().map(|v| v * v).sum::<f64>();
            }
            named.insert(name.clone(), g);
        }
        let record = LossRecord {
            iteration,
            pair_type: batch.pair_type(),
            total: lg.breakdown.total,
            kl_term: lg.breakdown.kl_term,
            ranking_term: lg.breakdown.ranking_term,
            shared_grad_norm: shared_sq.sqrt(),
        };
        drop(lg);
        adam_step(&mut state.params, &named, &mut state.optimizer, &adam)?;
        trajectory.push(record);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("step_{iteration:06}")), &state)?;
            }
        }
    }
    Ok(TrainOutcome { state, trajectory })
}

fn at_iteration(e: CoreError, iteration: usize) -> CoreError {
    match e {
        CoreError::NumericAbort { term, detail, .. } => CoreError::NumericAbort {
            iteration,
            term,
            detail,
        },
        other => other,
    }
}

fn check_terms(b: &crate::losses::LossBreakdown, iteration: usize) -> Result<()> {
    let mut terms = vec![("kl_term".to_string(), b.kl_term)];
    terms.extend(b.ranking_terms.iter().map(|(l, v)| (format!("ranking_term({l})"), *v)));
    terms.push(("total".to_string(), b.total));
    if let Some((term, v)) = terms.into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(CoreError::NumericAbort {
            iteration,
            term,
            detail: format!("value {v}"),
        });
    }
    Ok(())
}

/// Writes `iteration,total,kl_term,ranking_term` rows.
pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::from("iteration,total,kl_term,ranking_term\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.iteration, r.total, r.kl_term, r.ranking_term));
    }
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(out.as_bytes()).at(path)
}

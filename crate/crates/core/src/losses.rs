//! Training objectives: KL transfer from teacher probabilities and a
//! cosine margin ranking loss between paired representations.

use std::collections::BTreeMap;
use std::sync::Arc;

use aligned_tensor::{Graph, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stack_payloads, Modality, PairedBatch};
use crate::encoders::{encode, Binder, ModelParams, Tap};
use crate::error::{CoreError, Result};

/// Tolerance on row sums of probability inputs.
pub const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub ranking_layers: Vec<Tap>,
    pub kl_weight: f64,
    pub ranking_weight: f64,
    /// Negatives per anchor; `None` uses every other pair in the batch.
    pub negatives_per_positive: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            ranking_layers: vec![Tap::Bottleneck, Tap::SHARED1, Tap::SHARED2],
            kl_weight: 1.0,
            ranking_weight: 1.0,
            negatives_per_positive: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(CoreError::config(format!("margin must be positive, got {}", self.margin)));
        }
        for (name, w) in [("kl_weight", self.kl_weight), ("ranking_weight", self.ranking_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CoreError::config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if self.negatives_per_positive == Some(0) {
            return Err(CoreError::config("negatives_per_positive must be at least 1"));
        }
        if !self.kl_enabled() && !self.ranking_enabled() {
            return Err(CoreError::config("every loss term is disabled"));
        }
        if self.ranking_layers.contains(&Tap::Output) {
            return Err(CoreError::config("ranking applies to hidden activations, not the output"));
        }
        Ok(())
    }

    pub fn kl_enabled(&self) -> bool {
        self.kl_weight > 0.0
    }

    pub fn ranking_enabled(&self) -> bool {
        self.ranking_weight > 0.0 && !self.ranking_layers.is_empty()
    }
}

fn check_stochastic(what: &str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(CoreError::Contract(format!("{what} must be B x N, got {:?}", t.shape())));
    }
    for r in 0..t.shape()[0] {
        let row = t.row(r);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(CoreError::Contract(format!(
                "{what} row {r} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Batch mean of `KL(teacher || student)`; student entries are floored at
/// 1e-12 inside the logarithm.
pub fn kl_transfer_loss(g: &mut Graph, teacher: &Tensor, student: Var) -> Result<Var> {
    check_stochastic("teacher", teacher)?;
    check_stochastic("student", g.value(student))?;
    if teacher.shape() != g.value(student).shape() {
        return Err(CoreError::Contract(format!(
            "teacher {:?} vs student {:?}",
            teacher.shape(),
            g.value(student).shape()
        )));
    }
    Ok(g.kl_divergence(Arc::new(teacher.clone()), student)?)
}

/// `(anchor, negative)` index pairs over a batch; never pairs a row with itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativePlan {
    pairs: Vec<(usize, usize)>,
}

impl NegativePlan {
    /// Every other in-batch item as a negative, or a seeded subset of
    /// `cap` of them per anchor.
    pub fn in_batch(batch: usize, cap: Option<usize>, seed: u64) -> Result<Self> {
        if batch < 2 {
            return Err(CoreError::config(format!("ranking needs a batch of at least 2, got {batch}")));
        }
        let per = cap.unwrap_or(batch - 1).min(batch - 1);
        let mut pairs = Vec::with_capacity(batch * per);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..batch {
            let mut others: Vec<usize> = (0..batch).filter(|&j| j != i).collect();
            if per < others.len() {
                others.shuffle(&mut rng);
                others.truncate(per);
                others.sort_unstable();
            }
            pairs.extend(others.into_iter().map(|j| (i, j)));
        }
        Ok(NegativePlan { pairs })
    }

    pub fn from_pairs(batch: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(CoreError::config("empty negative plan"));
        }
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= batch || j >= batch) {
            return Err(CoreError::config(format!("invalid negative pair ({i}, {j}) for batch {batch}")));
        }
        Ok(NegativePlan { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Mean over the plan of `max(0, margin − cos(x_i, y_i) + cos(x_i, y_j))`.
pub fn ranking_loss(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    plan: &NegativePlan,
    margin: f64,
) -> Result<Var> {
    let (sa, sp) = (g.value(anchors).shape().to_vec(), g.value(positives).shape().to_vec());
    if sa != sp || sa.len() != 2 {
        return Err(CoreError::Contract(format!("anchors {sa:?} vs positives {sp:?}")));
    }
    if sa[0] < 2 {
        return Err(CoreError::config("ranking needs a batch of at least 2"));
    }
    let (ii, jj): (Vec<usize>, Vec<usize>) = plan.pairs().iter().copied().unzip();
    if ii.iter().chain(&jj).any(|&k| k >= sa[0]) {
        return Err(CoreError::Contract("negative plan indexes beyond the batch".into()));
    }
    let degenerate = |e: TensorError| match e {
        TensorError::Degenerate { detail, .. } => CoreError::Degenerate(detail),
        other => other.into(),
    };
    let pos = g.cosine_similarity(anchors, positives).map_err(degenerate)?;
    let a = g.gather_rows(anchors, &ii)?;
    let n = g.gather_rows(positives, &jj)?;
    let neg = g.cosine_similarity(a, n).map_err(degenerate)?;
    let pos = g.gather_rows(pos, &ii)?;
    let diff = g.sub(neg, pos)?;
    let shifted = g.add_scalar(diff, margin)?;
    let hinge = g.relu(shifted)?;
    Ok(g.mean(hinge)?)
}

/// Unweighted values of each term of [`combined_loss`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kl_term: f64,
    pub ranking_term: f64,
    /// `(label, value)` per direction and layer, e.g. `vision->sound@shared1`.
    pub ranking_terms: Vec<(String, f64)>,
}

/// A built loss graph ready for backpropagation.
pub struct LossGraph {
    pub graph: Graph,
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// Parameter name → graph leaf, for every parameter the batch touched.
    pub params: BTreeMap<String, Var>,
}

fn term_error(term: &str, e: impl Into<CoreError>) -> CoreError {
    match e.into() {
        CoreError::Tensor(TensorError::NonFinite { op }) => CoreError::NumericAbort {
            iteration: 0,
            term: term.to_string(),
            detail: format!("non-finite output of {op}"),
        },
        other => other,
    }
}

/// Builds the weighted objective for one batch.
///
/// The KL term compares each pathway's softmax with the teacher rows for
/// the paired images. Ranking terms run in both directions between the
/// image and its partner on every configured layer. Sound and text are
/// never compared because a batch only ever pairs one of them with images.
pub fn combined_loss(
    batch: &PairedBatch,
    params: &ModelParams,
    cfg: &LossConfig,
    negative_seed: u64,
) -> Result<LossGraph> {
    cfg.validate()?;
    let teacher = match (cfg.kl_enabled(), batch.teacher()) {
        (true, None) => {
            return Err(CoreError::config(
                "KL transfer is enabled but the batch carries no teacher targets",
            ))
        }
        (_, t) => t,
    };
    let partner = batch.pair_type().partner();
    let mut g = Graph::new();
    let mut binder = Binder::new(params, true);
    let img_in = g.input(stack_payloads(batch.images())?);
    let oth_in = g.input(stack_payloads(batch.partners())?);
    let img = encode(&mut g, &mut binder, Modality::Image, img_in)
        .map_err(|e| term_error("forward(image)", e))?;
    let oth = encode(&mut g, &mut binder, partner, oth_in)
        .map_err(|e| term_error(&format!("forward({partner})"), e))?;

    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Var> = None;
    let accumulate = |g: &mut Graph, acc: &mut Option<Var>, v: Var| -> Result<()> {
        *acc = Some(match *acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
        Ok(())
    };

    if cfg.kl_enabled() {
        let teacher = teacher.expect("checked above");
        let a = kl_transfer_loss(&mut g, teacher, img.output).map_err(|e| term_error("kl_term(image)", e))?;
        let b = kl_transfer_loss(&mut g, teacher, oth.output)
            .map_err(|e| term_error(&format!("kl_term({partner})"), e))?;
        let kl = g.add(a, b)?;
        breakdown.kl_term = g.value(kl).data()[0];
        let weighted = g.scale(kl, cfg.kl_weight)?;
        accumulate(&mut g, &mut total, weighted)?;
    }

    if cfg.ranking_enabled() {
        let plan = NegativePlan::in_batch(batch.len(), cfg.negatives_per_positive, negative_seed)?;
        let mut rank: Option<Var> = None;
        for &tap in &cfg.ranking_layers {
            let (vi, vo) = (img.tap(tap)?, oth.tap(tap)?);
            for (from, to, a, p) in [("vision", partner.as_str(), vi, vo), (partner.as_str(), "vision", vo, vi)] {
                let label = format!("{from}->{to}@{tap}");
                let term = ranking_loss(&mut g, a, p, &plan, cfg.margin)
                    .map_err(|e| term_error(&format!("ranking_term({label})"), e))?;
                breakdown.ranking_terms.push((label, g.value(term).data()[0]));
                accumulate(&mut g, &mut rank, term)?;
            }
        }
        let rank = rank.expect("at least one ranking layer");
        breakdown.ranking_term = g.value(rank).data()[0];
        let weighted = g.scale(rank, cfg.ranking_weight)?;
        accumulate(&mut g, &mut total, weighted)?;
    }

    let total = total.expect("validated: some term enabled");
    breakdown.total = g.value(total).data()[0];
    Ok(LossGraph {
        graph: g,
        total,
        breakdown,
        params: binder.into_bound(),
    })
}

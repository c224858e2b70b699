use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{embed_pairs, standardize, Embeddings};
use crate::data::{DatasetIndex, Modality, SampleSource};
use crate::encoders::{ModelParams, Tap};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalOptions {
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default = "default_split_size")]
    pub split_size: usize,
    /// Supplied by the caller's run seed rather than read from config.
    #[serde(skip)]
    pub seed: u64,
    /// Standardize query features per split before ranking.
    #[serde(default = "default_true")]
    pub standardize_queries: bool,
}

fn default_splits() -> usize {
    5
}

fn default_split_size() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

impl RetrievalOptions {
    pub fn new(n_splits: usize, split_size: usize, seed: u64) -> Self {
        RetrievalOptions {
            n_splits,
            split_size,
            seed,
            standardize_queries: true,
        }
    }
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions::new(default_splits(), default_split_size(), 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub split_size: usize,
    /// Median rank of each split.
    pub split_medians: Vec<f64>,
    pub average_median_rank: f64,
}

impl RetrievalResult {
    /// Expected median rank of a random ranking.
    pub fn chance(&self) -> f64 {
        (self.split_size as f64 + 1.0) / 2.0
    }
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// 1-based rank of `targets[i]` among all targets for `queries[i]`, sorted by
/// descending cosine. Equal similarities are ordered by ascending target id.
pub fn retrieval_ranks(queries: &Embeddings, targets: &Embeddings) -> Result<Vec<usize>> {
    if queries.len() != targets.len() || queries.dim() != targets.dim() {
        return Err(CoreError::Contract(format!(
            "queries ({} × {}) and targets ({} × {}) do not align",
            queries.len(),
            queries.dim(),
            targets.len(),
            targets.dim()
        )));
    }
    let ids = targets.ids();
    let ranks = (0..queries.len())
        .map(|i| {
            let q = queries.row(i);
            let sims: Vec<f64> = (0..targets.len()).map(|j| cosine(q, targets.row(j))).collect();
            let truth = sims[i];
            1 + sims
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > truth || (s == truth && ids[j] < ids[i]))
                .count()
        })
        .collect();
    Ok(ranks)
}

pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Average over `n_splits` random splits of the median rank of the true
/// target. Queries and targets are paired by id.
///
/// Splits are disjoint when enough pairs exist, otherwise each split draws
/// its own subset.
pub fn median_rank_retrieval(
    queries: &Embeddings,
    targets: &Embeddings,
    opts: &RetrievalOptions,
) -> Result<RetrievalResult> {
    let n = queries.len();
    if opts.n_splits == 0 || opts.split_size < 1 {
        return Err(CoreError::config("retrieval needs at least one split of size 1"));
    }
    if opts.split_size > n {
        return Err(CoreError::config(format!(
            "split size {} exceeds the {n} available pairs",
            opts.split_size
        )));
    }
    let by_id: HashMap<&str, usize> = targets.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if by_id.len() != targets.len() || targets.len() != n {
        return Err(CoreError::Contract("targets must hold exactly one vector per query id".into()));
    }
    let target_of: Vec<usize> = queries
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CoreError::Contract(format!("no target for query {id}")))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let disjoint = opts.n_splits * opts.split_size <= n;
    let mut split_medians = Vec::with_capacity(opts.n_splits);
    for s in 0..opts.n_splits {
        let members: Vec<usize> = if disjoint {
            order[s * opts.split_size..(s + 1) * opts.split_size].to_vec()
        } else {
            if s > 0 {
                order.shuffle(&mut rng);
            }
            order[..opts.split_size].to_vec()
        };
        let mut q = queries.select(&members);
        if opts.standardize_queries {
            q = standardize(&q);
        }
        let t_rows: Vec<usize> = members.iter().map(|&m| target_of[m]).collect();
        let t = targets.select(&t_rows);
        split_medians.push(median(&retrieval_ranks(&q, &t)?));
    }
    let average_median_rank = split_medians.iter().sum::<f64>() / split_medians.len() as f64;
    Ok(RetrievalResult {
        split_size: opts.split_size,
        split_medians,
        average_median_rank,
    })
}

/// Retrieval in both directions between two modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRetrieval {
    pub query: Modality,
    pub target: Modality,
    pub result: RetrievalResult,
}

/// Embeds `pair_ids` in both modalities at `tap` and ranks each direction.
pub fn cross_modal_retrieval(
    params: &ModelParams,
    source: &dyn SampleSource,
    index: &DatasetIndex,
    pair_ids: &[String],
    modalities: (Modality, Modality),
    tap: Tap,
    opts: &RetrievalOptions,
) -> Result<[PairRetrieval; 2]> {
    let (a, b) = modalities;
    let ea = embed_pairs(params, source, index, pair_ids, a, tap)?;
    let eb = embed_pairs(params, source, index, pair_ids, b, tap)?;
    Ok([
        PairRetrieval {
            query: a,
            target: b,
            result: median_rank_retrieval(&ea, &eb, opts)?,
        },
        PairRetrieval {
            query: b,
            target: a,
            result: median_rank_retrieval(&eb, &ea, opts)?,
        },
    ])
}

/// Sound↔text retrieval through the shared space. Meaningful when the
/// network never saw sound and text together during training.
pub fn bridge_transfer_eval(
    params: &ModelParams,
    source: &dyn SampleSource,
    index: &DatasetIndex,
    pair_ids: &[String],
    tap: Tap,
    opts: &RetrievalOptions,
) -> Result<[PairRetrieval; 2]> {
    cross_modal_retrieval(params, source, index, pair_ids, (Modality::Sound, Modality::Text), tap, opts)
}

/// The deepest shared hidden activation of a network.
pub fn last_hidden_tap(params: &ModelParams) -> Tap {
    Tap::Shared(params.spec().hidden_layer_indices().len())
}

use serde::{Deserialize, Serialize};

use super::embed::{embed_all, Embeddings};
use crate::data::{DatasetIndex, Modality, SampleSource};
use crate::encoders::{ModelParams, Tap};
use crate::error::{CoreError, Result};

/// One entry of a unit's top-activation listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub unit: usize,
    pub modality: Modality,
    /// 1-based position in the listing.
    pub rank: usize,
    pub sample_id: String,
    pub activation: f64,
}

/// The `k` highest activations of every unit, ties broken by ascending id.
pub fn top_k(activations: &Embeddings, modality: Modality, k: usize) -> Result<Vec<ProbeRow>> {
    if k == 0 {
        return Err(CoreError::config("probe k must be at least 1"));
    }
    let ids = activations.ids();
    let mut rows = Vec::with_capacity(activations.dim() * k.min(ids.len()));
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for unit in 0..activations.dim() {
        let act = |i: usize| activations.row(i)[unit];
        order.sort_by(|&a, &b| act(b).total_cmp(&act(a)).then_with(|| ids[a].cmp(&ids[b])));
        rows.extend(order.iter().take(k).enumerate().map(|(r, &i)| ProbeRow {
            unit,
            modality,
            rank: r + 1,
            sample_id: ids[i].clone(),
            activation: act(i),
        }));
    }
    Ok(rows)
}

/// Top-`k` samples per unit at `tap`, for each requested modality.
pub fn probe_units(
    params: &ModelParams,
    source: &dyn SampleSource,
    index: &DatasetIndex,
    pair_ids: &[String],
    modalities: &[Modality],
    tap: Tap,
    k: usize,
) -> Result<Vec<ProbeRow>> {
    let mut rows = Vec::new();
    for &m in modalities {
        let ids = index.sample_ids(pair_ids, m)?;
        let e = embed_all(params, source, &ids, &ids, m, tap)?;
        rows.extend(top_k(&e, m, k)?);
    }
    rows.sort_by(|a, b| a.unit.cmp(&b.unit).then(a.modality.cmp(&b.modality)).then(a.rank.cmp(&b.rank)));
    Ok(rows)
}

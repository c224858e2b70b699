use aligned_tensor::Tensor;

use crate::data::{DatasetIndex, Modality, SampleSource};
use crate::encoders::{forward_tap, ModelParams, Tap};
use crate::error::{CoreError, Result};

/// Samples per forward pass when embedding a collection.
pub const EMBED_BATCH: usize = 32;

/// Row-major matrix of vectors, one per id.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl Embeddings {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(CoreError::Contract(format!(
                "{} ids of dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        Ok(Embeddings { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != ids.len() || rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::Contract("ragged or mismatched embedding rows".into()));
        }
        Embeddings::new(ids, dim, rows.concat())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Rows at the given positions, in order.
    pub fn select(&self, rows: &[usize]) -> Embeddings {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Embeddings {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            dim: self.dim,
            data,
        }
    }

    /// Applies `f(row_index, row)` to every row in place.
    pub fn map_rows(mut self, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        for (i, row) in self.data.chunks_exact_mut(self.dim).enumerate() {
            f(i, row);
        }
        self
    }
}

/// Per-dimension zero mean and unit variance over the given rows.
/// Constant dimensions are centered but not scaled.
pub fn standardize(e: &Embeddings) -> Embeddings {
    let n = e.len() as f64;
    let mut mean = vec![0.0; e.dim];
    for i in 0..e.len() {
        for (m, v) in mean.iter_mut().zip(e.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; e.dim];
    for i in 0..e.len() {
        for ((s, v), m) in var.iter_mut().zip(e.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    e.clone().map_rows(|_, row| {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - m) * s;
        }
    })
}

/// Activations at `tap` for each sample, keyed by `keys[i]`.
pub fn embed_all(
    params: &ModelParams,
    source: &dyn SampleSource,
    keys: &[String],
    sample_ids: &[String],
    modality: Modality,
    tap: Tap,
) -> Result<Embeddings> {
    if keys.len() != sample_ids.len() {
        return Err(CoreError::Contract("keys and sample ids differ in length".into()));
    }
    if keys.is_empty() {
        return Err(CoreError::config("nothing to embed"));
    }
    let mut data = Vec::new();
    let mut dim = 0;
    for chunk in sample_ids.chunks(EMBED_BATCH) {
        let samples = source.load_many(chunk, modality)?;
        let out: Tensor = forward_tap(params, &samples, tap)?;
        dim = out.shape()[1];
        data.extend_from_slice(out.data());
    }
    Embeddings::new(keys.to_vec(), dim, data)
}

/// Embeddings of one modality for the given pairs, keyed by pair id.
pub fn embed_pairs(
    params: &ModelParams,
    source: &dyn SampleSource,
    index: &DatasetIndex,
    pair_ids: &[String],
    modality: Modality,
    tap: Tap,
) -> Result<Embeddings> {
    let ids = index.sample_ids(pair_ids, modality)?;
    embed_all(params, source, pair_ids, &ids, modality, tap)
}

/// Raw flattened payloads (no network), keyed by pair id.
pub fn raw_features(
    source: &dyn SampleSource,
    index: &DatasetIndex,
    pair_ids: &[String],
    modality: Modality,
) -> Result<Embeddings> {
    let ids = index.sample_ids(pair_ids, modality)?;
    let mut data = Vec::new();
    let mut dim = 0;
    for id in &ids {
        let s = source.load(id, modality)?;
        dim = s.payload.len();
        data.extend_from_slice(s.payload.data());
    }
    Embeddings::new(pair_ids.to_vec(), dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1 - 3.0, 7.0])
            .collect();
        let ids = (0..50).map(|i| i.to_string()).collect();
        let s = standardize(&Embeddings::from_rows(ids, &rows).unwrap());
        for d in 0..3 {
            let col: Vec<f64> = (0..50).map(|i| s.row(i)[d]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-12);
            if d < 2 {
                assert!((var - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(var, 0.0);
            }
        }
    }
}

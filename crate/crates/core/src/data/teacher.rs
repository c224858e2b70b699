use std::collections::BTreeMap;
use std::path::Path;

use aligned_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::losses::STOCHASTIC_TOL;

/// Teacher class probabilities keyed by image sample id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeacherTargets {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl TeacherTargets {
    pub fn new(dim: usize) -> Self {
        TeacherTargets {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds a row. Rows whose sum is within 1e-6 of one are renormalized;
    /// anything further off, negative or non-finite is rejected.
    pub fn insert(&mut self, id: &str, mut row: Vec<f64>) -> Result<()> {
        if row.len() != self.dim {
            return Err(CoreError::data(format!(
                "teacher row {id} has {} entries, expected {}",
                row.len(),
                self.dim
            )));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CoreError::data(format!("teacher row {id} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(CoreError::data(format!("teacher row {id} sums to {sum}")));
        }
        // Rows already stochastic to rounding error are kept verbatim so
        // that a write/read cycle is lossless.
        if (sum - 1.0).abs() > 1e-12 {
            row.iter_mut().for_each(|p| *p /= sum);
        }
        self.rows.insert(id.to_string(), row);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    /// Stacks the rows for `ids` into a `B × N` tensor.
    pub fn rows_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = self.get(id.as_ref()).ok_or_else(|| {
                CoreError::data(format!("no teacher targets for image {}", id.as_ref()))
            })?;
            data.extend_from_slice(row);
        }
        Ok(Tensor::new(vec![ids.len(), self.dim], data)?)
    }

    /// CSV with an `id` column followed by `p0..p{N-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|j| format!("p{j}")));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (id, row) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let dim = r.headers().map_err(|e| csv_error(path, e))?.len().saturating_sub(1);
        if dim == 0 {
            return Err(CoreError::data(format!("{}: no probability columns", path.display())));
        }
        let mut t = TeacherTargets::new(dim);
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        CoreError::data(format!("{}: bad probability {v:?} for {id}", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            t.insert(&id, row)?;
        }
        Ok(t)
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> CoreError {
    CoreError::data(format!("{}: {e}", path.display()))
}

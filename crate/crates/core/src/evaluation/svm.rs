//! Linear one-vs-all classifiers: hinge loss plus an L2 penalty, minimized
//! by deterministic full-batch sub-gradient steps (Pegasos schedule).
//!
//! The bias is an extra feature whose constant value is the mean training
//! row norm, so scaling every input by `s` and `C` by `1/s²` yields the same
//! decisions.

use serde::{Deserialize, Serialize};

use super::embed::Embeddings;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureNorm {
    #[default]
    None,
    /// Scale every row to unit length.
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    #[serde(default = "default_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Keep weights inside the ball of radius `1/sqrt(lambda)`.
    #[serde(default = "default_true")]
    pub project: bool,
    #[serde(default)]
    pub normalize: FeatureNorm,
}

fn default_grid() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}

fn default_iterations() -> usize {
    400
}

fn default_true() -> bool {
    true
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_grid: default_grid(),
            iterations: default_iterations(),
            project: true,
            normalize: FeatureNorm::None,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(CoreError::config("C grid must be non-empty and positive"));
        }
        if self.iterations < 2 {
            return Err(CoreError::config("SVM needs at least two iterations"));
        }
        Ok(())
    }
}

/// One weight vector (with trailing bias weight) per class.
#[derive(Clone, Debug, PartialEq)]
pub struct OneVsAll {
    classes: usize,
    dim: usize,
    bias_feature: f64,
    normalize: FeatureNorm,
    weights: Vec<f64>,
}

fn prepare(e: &Embeddings, norm: FeatureNorm) -> Vec<f64> {
    match norm {
        FeatureNorm::None => e.data().to_vec(),
        FeatureNorm::L2 => e
            .clone()
            .map_rows(|_, r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    r.iter_mut().for_each(|v| *v /= n);
                }
            })
            .data()
            .to_vec(),
    }
}

impl OneVsAll {
    pub fn fit(x: &Embeddings, labels: &[usize], classes: usize, c: f64, cfg: &SvmConfig) -> Result<Self> {
        if labels.len() != x.len() || x.is_empty() {
            return Err(CoreError::Contract("one label per training row required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(CoreError::config(format!("label {bad} outside 0..{classes}")));
        }
        let dim = x.dim();
        let n = x.len();
        let data = prepare(x, cfg.normalize);
        let bias_feature = data
            .chunks_exact(dim)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        let lambda = 1.0 / (c * n as f64);
        let radius = 1.0 / lambda.sqrt();
        let width = dim + 1;
        let mut weights = vec![0.0; classes * width];
        for class in 0..classes {
            let mut w = vec![0.0; width];
            let mut avg = vec![0.0; width];
            let mut averaged = 0usize;
            let mut step = vec![0.0; width];
            for t in 1..=cfg.iterations {
                let eta = 1.0 / (lambda * t as f64);
                step.iter_mut().for_each(|v| *v = 0.0);
                for (row, &label) in data.chunks_exact(dim).zip(labels) {
                    let y = if label == class { 1.0 } else { -1.0 };
                    let score = dot(&w[..dim], row) + w[dim] * bias_feature;
                    if y * score < 1.0 {
                        for (s, v) in step[..dim].iter_mut().zip(row) {
                            *s += y * v;
                        }
                        step[dim] += y * bias_feature;
                    }
                }
                let shrink = 1.0 - eta * lambda;
                let gain = eta / n as f64;
                for (wi, si) in w.iter_mut().zip(&step) {
                    *wi = shrink * *wi + gain * si;
                }
                if cfg.project {
                    let norm = dot(&w, &w).sqrt();
                    if norm > radius {
                        let f = radius / norm;
                        w.iter_mut().for_each(|v| *v *= f);
                    }
                }
                if 2 * t > cfg.iterations {
                    averaged += 1;
                    for (a, wi) in avg.iter_mut().zip(&w) {
                        *a += wi;
                    }
                }
            }
            for (dst, a) in weights[class * width..(class + 1) * width].iter_mut().zip(&avg) {
                *dst = a / averaged as f64;
            }
        }
        Ok(OneVsAll {
            classes,
            dim,
            bias_feature,
            normalize: cfg.normalize,
            weights,
        })
    }

    /// Per-class scores for each row.
    pub fn scores(&self, x: &Embeddings) -> Result<Vec<Vec<f64>>> {
        if x.dim() != self.dim {
            return Err(CoreError::Contract(format!(
                "classifier expects dimension {}, got {}",
                self.dim,
                x.dim()
            )));
        }
        let data = prepare(x, self.normalize);
        let width = self.dim + 1;
        Ok(data
            .chunks_exact(self.dim)
            .map(|row| {
                (0..self.classes)
                    .map(|c| {
                        let w = &self.weights[c * width..(c + 1) * width];
                        dot(&w[..self.dim], row) + w[self.dim] * self.bias_feature
                    })
                    .collect()
            })
            .collect())
    }

    /// Highest-scoring class per row; ties go to the smaller class index.
    pub fn predict(&self, x: &Embeddings) -> Result<Vec<usize>> {
        Ok(self
            .scores(x)?
            .iter()
            .map(|s| {
                let mut best = 0;
                for (c, &v) in s.iter().enumerate() {
                    if v > s[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Stratified two-fold assignment: within each class, rows alternate folds
/// in order of appearance.
pub fn two_folds(labels: &[usize]) -> [Vec<usize>; 2] {
    let mut seen = std::collections::BTreeMap::<usize, usize>::new();
    let mut folds = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        let k = seen.entry(l).or_insert(0);
        folds[*k % 2].push(i);
        *k += 1;
    }
    folds
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub accuracy: f64,
    pub chosen_c: f64,
    /// Cross-validated training accuracy for each grid value.
    pub cv_accuracy: Vec<(f64, f64)>,
}

/// Picks `C` by two-fold cross-validation; ties go to the smaller `C`.
pub fn select_c(x: &Embeddings, labels: &[usize], classes: usize, cfg: &SvmConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    cfg.validate()?;
    let folds = two_folds(labels);
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(grid.len());
    for &c in &grid {
        let mut hits = 0.0;
        for k in 0..2 {
            let (train, test) = (&folds[k], &folds[1 - k]);
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let tl: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let model = OneVsAll::fit(&x.select(train), &tl, classes, c, cfg)?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            hits += accuracy(&model.predict(&x.select(test))?, &truth) * test.len() as f64;
        }
        scores.push((c, hits / labels.len() as f64));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok((best.0, scores))
}

/// Checks that every class in `0..classes` is present, picks `C` by
/// cross-validation and fits on all of `train`.
pub fn fit_selected(
    train: &Embeddings,
    train_labels: &[usize],
    classes: usize,
    cfg: &SvmConfig,
) -> Result<(OneVsAll, f64, Vec<(f64, f64)>)> {
    for c in 0..classes {
        if !train_labels.contains(&c) {
            return Err(CoreError::config(format!("class {c} is missing from the training set")));
        }
    }
    let (chosen_c, cv_accuracy) = select_c(train, train_labels, classes, cfg)?;
    let model = OneVsAll::fit(train, train_labels, classes, chosen_c, cfg)?;
    Ok((model, chosen_c, cv_accuracy))
}

/// Fits classifiers on one set of representations and scores them on
/// another. Every class in `0..classes` must appear in the training labels.
pub fn zero_shot_transfer(
    train: &Embeddings,
    train_labels: &[usize],
    test: &Embeddings,
    test_labels: &[usize],
    classes: usize,
    cfg: &SvmConfig,
) -> Result<ZeroShotResult> {
    if test_labels.len() != test.len() || test.is_empty() {
        return Err(CoreError::Contract("one label per test row required".into()));
    }
    let (model, chosen_c, cv_accuracy) = fit_selected(train, train_labels, classes, cfg)?;
    Ok(ZeroShotResult {
        accuracy: accuracy(&model.predict(test)?, test_labels),
        chosen_c,
        cv_accuracy,
    })
}

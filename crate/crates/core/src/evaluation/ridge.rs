//! Closed-form ridge regression between feature spaces, used as the
//! linear-mapping baseline for retrieval.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::embed::{raw_features, Embeddings};
use super::retrieval::{median_rank_retrieval, PairRetrieval, RetrievalOptions};
use crate::data::{DatasetIndex, Modality, SampleSource};
use crate::error::{CoreError, Result};

pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_true() -> bool {
    true
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            lambda: DEFAULT_LAMBDA,
            intercept: true,
        }
    }
}

#[derive(Clone, Debug)]
enum Solution {
    /// `W` is `p × q`.
    Primal(DMatrix<f64>),
    /// `W = Xcᵀ A` kept implicit; `gram = Xc Xcᵀ`.
    Dual {
        xc: DMatrix<f64>,
        a: DMatrix<f64>,
        gram: DMatrix<f64>,
    },
}

/// `y ≈ (x − x̄) W + ȳ`, minimizing `‖Yc − Xc W‖² + λ‖W‖²`.
#[derive(Clone, Debug)]
pub struct RidgeMap {
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
    solution: Solution,
}

fn matrix(e: &Embeddings) -> DMatrix<f64> {
    DMatrix::from_row_slice(e.len(), e.dim(), e.data())
}

fn column_means(m: &DMatrix<f64>, enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![0.0; m.ncols()];
    }
    m.column_iter().map(|c| c.mean()).collect()
}

fn center(m: &mut DMatrix<f64>, mean: &[f64]) {
    for (mut col, mu) in m.column_iter_mut().zip(mean) {
        col.add_scalar_mut(-mu);
    }
}

fn solve_spd(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| CoreError::Degenerate("ridge system is not positive definite".into()))
}

impl RidgeMap {
    /// Rows of `x` and `y` are paired by position.
    pub fn fit(x: &Embeddings, y: &Embeddings, cfg: &RidgeConfig) -> Result<Self> {
        if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
            return Err(CoreError::config(format!("ridge lambda must be positive, got {}", cfg.lambda)));
        }
        if x.len() != y.len() || x.is_empty() {
            return Err(CoreError::Contract("ridge needs equally many source and target rows".into()));
        }
        let mut xm = matrix(x);
        let mut ym = matrix(y);
        let x_mean = column_means(&xm, cfg.intercept);
        let y_mean = column_means(&ym, cfg.intercept);
        center(&mut xm, &x_mean);
        center(&mut ym, &y_mean);
        let (n, p) = xm.shape();
        let solution = if p <= n {
            let mut lhs = xm.transpose() * &xm;
            for i in 0..p {
                lhs[(i, i)] += cfg.lambda;
            }
            Solution::Primal(solve_spd(lhs, &(xm.transpose() * &ym))?)
        } else {
            let gram = &xm * xm.transpose();
            let mut lhs = gram.clone();
            for i in 0..n {
                lhs[(i, i)] += cfg.lambda;
            }
            let a = solve_spd(lhs, &ym)?;
            Solution::Dual { xc: xm, a, gram }
        };
        Ok(RidgeMap { x_mean, y_mean, solution })
    }

    pub fn predict(&self, x: &Embeddings) -> Result<Embeddings> {
        if x.dim() != self.x_mean.len() {
            return Err(CoreError::Contract(format!(
                "ridge map expects dimension {}, got {}",
                self.x_mean.len(),
                x.dim()
            )));
        }
        let mut xm = matrix(x);
        center(&mut xm, &self.x_mean);
        let mut out = match &self.solution {
            Solution::Primal(w) => xm * w,
            Solution::Dual { xc, a, .. } => (xm * xc.transpose()) * a,
        };
        for (mut col, mu) in out.column_iter_mut().zip(&self.y_mean) {
            col.add_scalar_mut(*mu);
        }
        let (rows, cols) = out.shape();
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|rc| out[rc]).collect();
        Embeddings::new(x.ids().to_vec(), cols, data)
    }

    /// Frobenius norm of the weight matrix.
    pub fn weight_norm(&self) -> f64 {
        match &self.solution {
            Solution::Primal(w) => w.norm(),
            Solution::Dual { a, gram, .. } => (a.transpose() * gram * a).trace().max(0.0).sqrt(),
        }
    }
}

/// Regresses raw features of each non-image modality onto raw image
/// features, then retrieves by cosine in image space.
///
/// Returns every ordered pair among image, sound and text.
pub fn linear_regression_baseline(
    source: &dyn SampleSource,
    index: &DatasetIndex,
    train_pairs: &[String],
    test_pairs: &[String],
    cfg: &RidgeConfig,
    opts: &RetrievalOptions,
) -> Result<Vec<PairRetrieval>> {
    let image_train = raw_features(source, index, train_pairs, Modality::Image)?;
    let mut mapped = vec![(Modality::Image, raw_features(source, index, test_pairs, Modality::Image)?)];
    for m in [Modality::Sound, Modality::Text] {
        let map = RidgeMap::fit(&raw_features(source, index, train_pairs, m)?, &image_train, cfg)?;
        mapped.push((m, map.predict(&raw_features(source, index, test_pairs, m)?)?));
    }
    let mut out = Vec::new();
    for (qm, q) in &mapped {
        for (tm, t) in &mapped {
            if qm != tm {
                out.push(PairRetrieval {
                    query: *qm,
                    target: *tm,
                    result: median_rank_retrieval(q, t, opts)?,
                });
            }
        }
    }
    Ok(out)
}

//! Central finite-difference verification of [`Graph::backward`].

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph, Var};

/// Worst disagreement between analytic and numeric gradient for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub var: Var,
    pub label: Option<String>,
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over the checked entries.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() <= tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every entry of every trainable leaf with step `eps`.
pub fn gradient_check(graph: &mut Graph, output: Var, eps: f64) -> Result<GradCheckReport> {
    let analytic = graph.backward(output)?;
    gradient_check_against(graph, output, &analytic, eps, None)
}

/// Like [`gradient_check`] but probes at most `per_param` evenly strided
/// entries of each parameter.
pub fn gradient_check_sampled(
    graph: &mut Graph,
    output: Var,
    eps: f64,
    per_param: usize,
) -> Result<GradCheckReport> {
    let analytic = graph.backward(output)?;
    gradient_check_against(graph, output, &analytic, eps, Some(per_param))
}

/// Compares externally supplied gradients with central differences.
/// Leaf values and downstream nodes are restored before returning.
pub fn gradient_check_against(
    graph: &mut Graph,
    output: Var,
    analytic: &Gradients,
    eps: f64,
    per_param: Option<usize>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for var in graph.params() {
        let grad = analytic
            .get(var)
            .ok_or_else(|| TensorError::Contract(format!("no gradient for node {}", var.index())))?
            .clone();
        let original = graph.value(var).clone();
        let n = original.len();
        let stride = match per_param {
            Some(k) if k > 0 && k < n => n.div_ceil(k),
            _ => 1,
        };
        let mut check = ParamCheck {
            var,
            label: graph.label(var).map(str::to_owned),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            entries_checked: 0,
        };
        for i in (0..n).step_by(stride) {
            let probe = |graph: &mut Graph, delta: f64| -> Result<f64> {
                let mut t = original.clone();
                t.data_mut()[i] += delta;
                graph.set_leaf(var, t)?;
                graph.recompute()?;
                Ok(graph.value(output).data()[0])
            };
            let plus = probe(graph, eps)?;
            let minus = probe(graph, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || check.entries_checked == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
            check.entries_checked += 1;
        }
        graph.set_leaf(var, original)?;
        report.params.push(check);
    }
    graph.recompute()?;
    Ok(report)
}

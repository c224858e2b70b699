//! Recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so node ids are already a
//! topological order. Each node keeps enough of its operation to be
//! re-executed by [`Graph::recompute`] after a leaf value changes.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    FullyConnected { input: Var, weight: Var, bias: Var },
    Conv1d { input: Var, kernels: Var, bias: Var },
    Conv2d { input: Var, kernels: Var, bias: Var, stride: usize },
    MaxPool1d { input: Var, factor: usize },
    MaxPool2d { input: Var, window: usize, stride: usize },
    Relu(Var),
    Softmax(Var),
    Cosine(Var, Var),
    Reshape { input: Var, shape: Vec<usize> },
    GatherRows { input: Var, indices: Arc<[usize]> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Sum(Var),
    Mean(Var),
    KlDivergence { teacher: Arc<Tensor>, student: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Conv1d { .. } => "conv1d_same",
            Op::Conv2d { .. } => "conv2d_same",
            Op::MaxPool1d { .. } => "maxpool1d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::Cosine(..) => "cosine_similarity",
            Op::Reshape { .. } => "reshape",
            Op::GatherRows { .. } => "gather_rows",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::KlDivergence { .. } => "kl_divergence",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::FullyConnected {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Conv1d {
                input,
                kernels,
                bias,
            }
            | Op::Conv2d {
                input,
                kernels,
                bias,
                ..
            } => vec![*input, *kernels, *bias],
            Op::MaxPool1d { input, .. }
            | Op::MaxPool2d { input, .. }
            | Op::GatherRows { input, .. }
            | Op::Reshape { input, .. } => vec![*input],
            Op::Relu(v)
            | Op::Softmax(v)
            | Op::Scale(v, _)
            | Op::AddScalar(v, _)
            | Op::Sum(v)
            | Op::Mean(v) => vec![*v],
            Op::KlDivergence { student, .. } => vec![*student],
            Op::Cosine(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Clone, Debug, Default)]
enum Cache {
    #[default]
    None,
    Argmax(Vec<usize>),
    Norms(Vec<(f64, f64)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    cache: Cache,
    requires_grad: bool,
    label: Option<String>,
}

/// A tape of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, v: Var) -> Option<&mut Tensor> {
        self.grads.get_mut(v.0).and_then(Option::as_mut)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Arc<Tensor>, requires_grad: bool, label: Option<String>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            cache: Cache::None,
            requires_grad,
            label,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), false, None)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), true, None)
    }

    pub fn param_named(&mut self, name: impl Into<String>, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), true, Some(name.into()))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shared handle to a node's value; leaves keep the `Arc` they were built from.
    pub fn shared_value(&self, v: Var) -> &Arc<Tensor> {
        &self.nodes[v.0].value
    }

    pub fn label(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].label.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Leaves that require gradients, in creation order.
    pub fn params(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .map(Var)
            .filter(|&v| self.is_leaf(v) && self.requires_grad(v))
            .collect()
    }

    /// Replaces a leaf's value. Downstream nodes are stale until [`Graph::recompute`].
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = self
            .nodes
            .get_mut(v.0)
            .ok_or_else(|| TensorError::Contract(format!("unknown node {}", v.0)))?;
        if !matches!(node.op, Op::Leaf) {
            return Err(TensorError::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(TensorError::Contract(format!(
                "leaf {} shape {:?} cannot take {:?}",
                v.0,
                node.value.shape(),
                value.shape()
            )));
        }
        node.value = Arc::new(value);
        Ok(())
    }

    /// Re-executes every non-leaf node from the current leaf values.
    pub fn recompute(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (value, cache) = self.eval(&self.nodes[i].op)?;
            let node = &mut self.nodes[i];
            node.value = Arc::new(value);
            node.cache = cache;
        }
        Ok(())
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(TensorError::Contract(format!(
                "node {} does not belong to this graph",
                v.0
            )));
        }
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let inputs = op.inputs();
        for &v in &inputs {
            self.check_var(v)?;
        }
        let (value, cache) = self.eval(&op)?;
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            cache,
            requires_grad,
            label: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn eval(&self, op: &Op) -> Result<(Tensor, Cache)> {
        let val = |v: &Var| -> &Tensor { &self.nodes[v.0].value };
        let (out, cache) = match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::FullyConnected {
                input,
                weight,
                bias,
            } => (
                ops::fc_forward(val(input), val(weight), val(bias))?,
                Cache::None,
            ),
            Op::Conv1d {
                input,
                kernels,
                bias,
            } => (
                ops::conv1d_forward(val(input), val(kernels), val(bias))?,
                Cache::None,
            ),
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            } => (
                ops::conv2d_forward(val(input), val(kernels), val(bias), *stride)?,
                Cache::None,
            ),
            Op::MaxPool1d { input, factor } => {
                let (t, arg) = ops::maxpool1d_forward(val(input), *factor)?;
                (t, Cache::Argmax(arg))
            }
            Op::MaxPool2d {
                input,
                window,
                stride,
            } => {
                let (t, arg) = ops::maxpool2d_forward(val(input), *window, *stride)?;
                (t, Cache::Argmax(arg))
            }
            Op::Relu(x) => (ops::relu_forward(val(x)), Cache::None),
            Op::Softmax(x) => (ops::softmax_forward(val(x))?, Cache::None),
            Op::Cosine(a, b) => {
                let (t, norms) = ops::cosine_forward(val(a), val(b))?;
                (t, Cache::Norms(norms))
            }
            Op::Reshape { input, shape } => (val(input).clone().reshape(shape.clone())?, Cache::None),
            Op::GatherRows { input, indices } => (gather_rows(val(input), indices)?, Cache::None),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if ta.shape() != tb.shape() {
                    return Err(TensorError::shape(
                        op.name(),
                        format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let sign = if matches!(op, Op::Add(..)) { 1.0 } else { -1.0 };
                let data = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| x + sign * y)
                    .collect();
                (Tensor::new(ta.shape().to_vec(), data)?, Cache::None)
            }
            Op::Scale(x, f) => (val(x).map(|v| v * f), Cache::None),
            Op::AddScalar(x, c) => (val(x).map(|v| v + c), Cache::None),
            Op::Sum(x) => (Tensor::scalar(val(x).data().iter().sum()), Cache::None),
            Op::Mean(x) => {
                let t = val(x);
                (
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64),
                    Cache::None,
                )
            }
            Op::KlDivergence { teacher, student } => {
                (ops::kl_forward(teacher, val(student))?, Cache::None)
            }
        };
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        Ok((out, cache))
    }

    /// `input (B×I) · weight (I×O) + bias (O)`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.push(Op::FullyConnected {
            input,
            weight,
            bias,
        })
    }

    /// Stride-1 cross-correlation of `B×C×L` with `F×C×K` kernels, zero
    /// padded by `(K−1)/2` on each end so the output keeps length `L`.
    pub fn conv1d_same(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        self.push(Op::Conv1d {
            input,
            kernels,
            bias,
        })
    }

    /// 2-D cross-correlation of `B×C×H×W` with `F×C×Kh×Kw` kernels: zero
    /// padding `(K−1)/2` per side, then `stride`. Output extents are `ceil(H/stride)`.
    pub fn conv2d_same(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var> {
        self.push(Op::Conv2d {
            input,
            kernels,
            bias,
            stride,
        })
    }

    pub fn maxpool1d(&mut self, input: Var, factor: usize) -> Result<Var> {
        self.push(Op::MaxPool1d { input, factor })
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        self.push(Op::MaxPool2d {
            input,
            window,
            stride,
        })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.push(Op::Relu(input))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        self.push(Op::Softmax(input))
    }

    /// Row-wise cosine similarity of two `B×D` tensors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Cosine(a, b))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Reshape { input, shape })
    }

    /// Collapses everything after the leading axis: `B×…` → `B×rest`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let shape = self.value(input).shape();
        let batch = shape.first().copied().unwrap_or(1);
        let rest = self.value(input).len() / batch;
        self.reshape(input, vec![batch, rest])
    }

    /// Selects rows of a `B×…` tensor (repeats allowed).
    pub fn gather_rows(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::GatherRows {
            input,
            indices: indices.into(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.push(Op::Scale(input, factor))
    }

    pub fn add_scalar(&mut self, input: Var, value: f64) -> Result<Var> {
        self.push(Op::AddScalar(input, value))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.push(Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.push(Op::Mean(input))
    }

    /// Batch-mean KL divergence `KL(teacher ‖ student)` of two row-stochastic
    /// `B×N` tensors; only the student receives a gradient.
    pub fn kl_divergence(&mut self, teacher: Arc<Tensor>, student: Var) -> Result<Var> {
        self.push(Op::KlDivergence { teacher, student })
    }

    /// Reverse-mode sweep from a single-element output.
    ///
    /// Every node with `requires_grad` receives a gradient (zeros when it does
    /// not influence the output); nodes consumed several times accumulate.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check_var(output)?;
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            &Op::FullyConnected {
                input,
                weight,
                bias,
            } => {
                let out = ops::fc_backward(
                    val(input),
                    val(weight),
                    g,
                    [need(input), need(weight), need(bias)],
                );
                for (v, t) in [input, weight, bias].into_iter().zip(out) {
                    if let Some(t) = t {
                        acc(v, t);
                    }
                }
            }
            &Op::Conv1d {
                input,
                kernels,
                bias,
            } => {
                let out = ops::conv1d_backward(
                    val(input),
                    val(kernels),
                    val(bias),
                    g,
                    [need(input), need(kernels), need(bias)],
                );
                for (v, t) in [input, kernels, bias].into_iter().zip(out) {
                    if let Some(t) = t {
                        acc(v, t);
                    }
                }
            }
            &Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            } => {
                let out = ops::conv2d_backward(
                    val(input),
                    val(kernels),
                    val(bias),
                    stride,
                    g,
                    [need(input), need(kernels), need(bias)],
                );
                for (v, t) in [input, kernels, bias].into_iter().zip(out) {
                    if let Some(t) = t {
                        acc(v, t);
                    }
                }
            }
            Op::MaxPool1d { input, .. } | Op::MaxPool2d { input, .. } => {
                let Cache::Argmax(arg) = &node.cache else {
                    unreachable!("pool nodes cache argmax")
                };
                acc(*input, ops::pool_backward(val(*input).shape(), arg, g));
            }
            &Op::Relu(x) => acc(x, ops::relu_backward(val(x), g)),
            &Op::Softmax(x) => acc(x, ops::softmax_backward(&node.value, g)),
            &Op::Cosine(a, b) => {
                let Cache::Norms(norms) = &node.cache else {
                    unreachable!("cosine nodes cache norms")
                };
                let [ga, gb] = ops::cosine_backward(val(a), val(b), norms, g, [need(a), need(b)]);
                if let Some(t) = ga {
                    acc(a, t);
                }
                if let Some(t) = gb {
                    acc(b, t);
                }
            }
            Op::Reshape { input, .. } => {
                let t = g.clone().reshape(val(*input).shape().to_vec()).unwrap();
                acc(*input, t);
            }
            Op::GatherRows { input, indices } => {
                let src = val(*input);
                let width = src.len() / src.shape()[0];
                let mut gx = Tensor::zeros(src.shape());
                let gxd = gx.data_mut();
                for (r, &i) in indices.iter().enumerate() {
                    let from = &g.data()[r * width..(r + 1) * width];
                    for (d, s) in gxd[i * width..(i + 1) * width].iter_mut().zip(from) {
                        *d += s;
                    }
                }
                acc(*input, gx);
            }
            &Op::Add(a, b) => {
                if need(a) {
                    acc(a, g.clone());
                }
                if need(b) {
                    acc(b, g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if need(a) {
                    acc(a, g.clone());
                }
                if need(b) {
                    acc(b, g.map(|v| -v));
                }
            }
            &Op::Scale(x, f) => acc(x, g.map(|v| v * f)),
            &Op::AddScalar(x, _) => acc(x, g.clone()),
            &Op::Sum(x) => acc(x, Tensor::full(val(x).shape(), g.data()[0])),
            &Op::Mean(x) => {
                let t = val(x);
                acc(x, Tensor::full(t.shape(), g.data()[0] / t.len() as f64));
            }
            Op::KlDivergence { teacher, student } => {
                acc(
                    *student,
                    ops::kl_backward(teacher, val(*student), g.data()[0]),
                );
            }
        }
    }
}

fn gather_rows(src: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let rows = *src
        .shape()
        .first()
        .ok_or_else(|| TensorError::shape("gather_rows", "scalar input"))?;
    if indices.is_empty() {
        return Err(TensorError::shape("gather_rows", "no rows selected"));
    }
    let width = src.len() / rows;
    let mut data = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        if i >= rows {
            return Err(TensorError::shape(
                "gather_rows",
                format!("row {i} out of range for {rows} rows"),
            ));
        }
        data.extend_from_slice(src.row(i));
    }
    let mut shape = src.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

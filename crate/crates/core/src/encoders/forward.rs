use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use aligned_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::spec::{Layer, Stage};
use crate::data::{stack_payloads, Modality, Sample};
use crate::error::{CoreError, Result};

/// Named activation exposed by the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Tap {
    /// Pathway output entering the shared trunk.
    Bottleneck,
    /// 1-based hidden layer of the shared trunk (post-ReLU).
    Shared(usize),
    /// Softmax output.
    Output,
}

impl Tap {
    pub const SHARED1: Tap = Tap::Shared(1);
    pub const SHARED2: Tap = Tap::Shared(2);
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tap::Bottleneck => f.write_str("bottleneck"),
            Tap::Shared(i) => write!(f, "shared{i}"),
            Tap::Output => f.write_str("output"),
        }
    }
}

impl FromStr for Tap {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bottleneck" => Ok(Tap::Bottleneck),
            "output" => Ok(Tap::Output),
            _ => s
                .strip_prefix("shared")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(Tap::Shared)
                .ok_or_else(|| CoreError::config(format!("unknown activation {s:?}"))),
        }
    }
}

impl TryFrom<String> for Tap {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Tap> for String {
    fn from(t: Tap) -> String {
        t.to_string()
    }
}

/// Lazily binds parameter tensors as graph leaves, one leaf per name.
///
/// Binding the same name twice yields the same [`Var`], so the shared trunk
/// is a single set of leaves no matter how many pathways feed it.
pub struct Binder<'p> {
    params: &'p ModelParams,
    trainable: bool,
    vars: BTreeMap<String, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ModelParams, trainable: bool) -> Self {
        Binder {
            params,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.params.shared(name)?.clone();
        let v = if self.trainable {
            g.param_named(name, value)
        } else {
            g.input(value)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn into_bound(self) -> BTreeMap<String, Var> {
        self.vars
    }
}

/// Graph handles for one modality's pass through pathway and trunk.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bottleneck: Var,
    pub hidden: Vec<Var>,
    pub output: Var,
}

impl Encoded {
    pub fn tap(&self, tap: Tap) -> Result<Var> {
        match tap {
            Tap::Bottleneck => Ok(self.bottleneck),
            Tap::Output => Ok(self.output),
            Tap::Shared(i) => self
                .hidden
                .get(i.wrapping_sub(1))
                .copied()
                .ok_or_else(|| CoreError::config(format!("network has no activation {tap}"))),
        }
    }
}

/// Runs one stage's layer stack, returning the stage output and the
/// output of every layer.
pub fn run_stage(
    g: &mut Graph,
    binder: &mut Binder<'_>,
    stage: Stage,
    input: Var,
) -> Result<(Var, Vec<Var>)> {
    let spec = binder.params.spec().clone();
    let groups = spec.param_groups()?;
    let (_, layers) = spec.stage_layers(stage);
    let mut x = input;
    let mut outs = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let group = groups.iter().find(|p| p.stage == stage && p.layer_index == i);
        let mut wb = |g: &mut Graph| -> Result<(Var, Var)> {
            let group = group.expect("parameterized layer has a group");
            Ok((binder.var(g, &group.weight())?, binder.var(g, &group.bias())?))
        };
        x = match *layer {
            Layer::Conv1d { .. } => {
                let (w, b) = wb(g)?;
                g.conv1d_same(x, w, b)?
            }
            Layer::Conv2d { stride, .. } => {
                let (w, b) = wb(g)?;
                g.conv2d_same(x, w, b, stride)?
            }
            Layer::MaxPool1d { factor } => g.maxpool1d(x, factor)?,
            Layer::MaxPool2d { window, stride } => g.maxpool2d(x, window, stride)?,
            Layer::Fc { .. } => {
                let (w, b) = wb(g)?;
                if g.value(x).rank() != 2 {
                    x = g.flatten(x)?;
                }
                g.fully_connected(x, w, b)?
            }
            Layer::Relu => g.relu(x)?,
            Layer::Softmax => g.softmax(x)?,
        };
        outs.push(x);
    }
    Ok((x, outs))
}

fn check_input(g: &Graph, binder: &Binder<'_>, modality: Modality, input: Var) -> Result<()> {
    let shape = g.value(input).shape();
    let expected = &binder.params.spec().pathway(modality).input_shape;
    if shape.len() != expected.len() + 1 || &shape[1..] != expected.as_slice() {
        return Err(CoreError::data(format!(
            "{modality} batch has shape {shape:?}, expected [batch, {}]",
            expected
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    Ok(())
}

/// Pathway only: `B × bottleneck_dim`.
pub fn encode_bottleneck(
    g: &mut Graph,
    binder: &mut Binder<'_>,
    modality: Modality,
    input: Var,
) -> Result<Var> {
    check_input(g, binder, modality, input)?;
    let (x, _) = run_stage(g, binder, Stage::from(modality), input)?;
    if g.value(x).rank() != 2 {
        Ok(g.flatten(x)?)
    } else {
        Ok(x)
    }
}

/// Full pass: pathway, shared hidden layers and softmax output.
pub fn encode(
    g: &mut Graph,
    binder: &mut Binder<'_>,
    modality: Modality,
    input: Var,
) -> Result<Encoded> {
    let bottleneck = encode_bottleneck(g, binder, modality, input)?;
    let (output, outs) = run_stage(g, binder, Stage::Shared, bottleneck)?;
    let hidden = binder
        .params
        .spec()
        .hidden_layer_indices()
        .into_iter()
        .map(|i| outs[i])
        .collect();
    Ok(Encoded {
        bottleneck,
        hidden,
        output,
    })
}

/// Evaluates a batch of same-modality samples without gradient tracking.
///
/// The result always contains the bottleneck, every shared hidden layer and
/// the softmax output, each as a `B × D` tensor.
pub fn forward(params: &ModelParams, samples: &[Sample]) -> Result<BTreeMap<Tap, Tensor>> {
    let modality = batch_modality(samples)?;
    let mut g = Graph::new();
    let mut binder = Binder::new(params, false);
    let input = g.input(stack_payloads(samples)?);
    let enc = encode(&mut g, &mut binder, modality, input)?;
    let mut out = BTreeMap::new();
    out.insert(Tap::Bottleneck, g.value(enc.bottleneck).clone());
    for (i, &h) in enc.hidden.iter().enumerate() {
        out.insert(Tap::Shared(i + 1), g.value(h).clone());
    }
    out.insert(Tap::Output, g.value(enc.output).clone());
    Ok(out)
}

/// Evaluates a single activation for a batch of samples.
pub fn forward_tap(params: &ModelParams, samples: &[Sample], tap: Tap) -> Result<Tensor> {
    let modality = batch_modality(samples)?;
    let mut g = Graph::new();
    let mut binder = Binder::new(params, false);
    let input = g.input(stack_payloads(samples)?);
    if tap == Tap::Bottleneck {
        let b = encode_bottleneck(&mut g, &mut binder, modality, input)?;
        return Ok(g.value(b).clone());
    }
    let enc = encode(&mut g, &mut binder, modality, input)?;
    Ok(g.value(enc.tap(tap)?).clone())
}

fn batch_modality(samples: &[Sample]) -> Result<Modality> {
    let first = samples
        .first()
        .ok_or_else(|| CoreError::Contract("forward on an empty batch".into()))?;
    if let Some(s) = samples.iter().find(|s| s.modality != first.modality) {
        return Err(CoreError::Contract(format!(
            "mixed modalities in one batch: {} and {}",
            first.modality, s.modality
        )));
    }
    Ok(first.modality)
}

//! Declarative network description and static shape inference.

use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{CoreError, Result};

/// One layer of a pathway or of the shared trunk.
///
/// Convolutions are "same"-padded and require an odd kernel. `Fc` flattens
/// its per-sample input before projecting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv1d {
        filters: usize,
        kernel: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    MaxPool1d {
        factor: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Fc {
        units: usize,
    },
    Relu,
    Softmax,
}

fn one() -> usize {
    1
}

impl Layer {
    fn param_kind(&self) -> Option<&'static str> {
        match self {
            Layer::Conv1d { .. } | Layer::Conv2d { .. } => Some("conv"),
            Layer::Fc { .. } => Some("fc"),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| {
            Err(CoreError::config(format!(
                "{self:?} cannot follow shape {input:?}: {what}"
            )))
        };
        match *self {
            Layer::Conv1d { filters, kernel } => {
                if input.len() != 2 {
                    return bad("expected channels x length");
                }
                if filters == 0 || kernel % 2 == 0 {
                    return bad("need filters > 0 and an odd kernel");
                }
                Ok(vec![filters, input[1]])
            }
            Layer::Conv2d {
                filters,
                kernel,
                stride,
            } => {
                if input.len() != 3 {
                    return bad("expected channels x height x width");
                }
                if filters == 0 || kernel % 2 == 0 || stride == 0 {
                    return bad("need filters > 0, an odd kernel and stride > 0");
                }
                let pad = kernel / 2;
                let ext = |n: usize| -> Option<usize> {
                    (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
                };
                match (ext(input[1]), ext(input[2])) {
                    (Some(h), Some(w)) => Ok(vec![filters, h, w]),
                    _ => bad("kernel larger than padded input"),
                }
            }
            Layer::MaxPool1d { factor } => {
                if input.len() != 2 || factor == 0 {
                    return bad("expected channels x length and factor > 0");
                }
                Ok(vec![input[0], input[1].div_ceil(factor)])
            }
            Layer::MaxPool2d { window, stride } => {
                if input.len() != 3 || window == 0 || stride == 0 {
                    return bad("expected channels x height x width, positive window and stride");
                }
                if input[1] < window || input[2] < window {
                    return bad("window larger than input");
                }
                Ok(vec![
                    input[0],
                    (input[1] - window) / stride + 1,
                    (input[2] - window) / stride + 1,
                ])
            }
            Layer::Fc { units } => {
                if units == 0 {
                    return bad("zero units");
                }
                Ok(vec![units])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 1 {
                    return bad("softmax needs a flat vector");
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Weight and bias shapes for a parameterized layer.
    fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv1d { filters, kernel } => {
                Some((vec![filters, input[0], kernel], vec![filters]))
            }
            Layer::Conv2d {
                filters, kernel, ..
            } => Some((vec![filters, input[0], kernel, kernel], vec![filters])),
            Layer::Fc { units } => Some((vec![input.iter().product(), units], vec![units])),
            _ => None,
        }
    }
}

/// A modality pathway: per-sample input shape plus its layer stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwaySpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub vision: PathwaySpec,
    pub sound: PathwaySpec,
    pub text: PathwaySpec,
    /// Shared trunk; consumes the bottleneck and ends in `Fc{output_dim}`, `Softmax`.
    pub shared: Vec<Layer>,
    pub bottleneck_dim: usize,
    pub output_dim: usize,
}

/// Network section: one of the three pathways or the shared trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Vision,
    Sound,
    Text,
    Shared,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Vision, Stage::Sound, Stage::Text, Stage::Shared];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vision => "vision",
            Stage::Sound => "sound",
            Stage::Text => "text",
            Stage::Shared => "shared",
        }
    }
}

impl From<Modality> for Stage {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Image => Stage::Vision,
            Modality::Sound => Stage::Sound,
            Modality::Text => Stage::Text,
        }
    }
}

/// A parameterized layer's name and tensor shapes, e.g. `sound.conv1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub stage: Stage,
    pub layer_index: usize,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
}

impl ParamGroup {
    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Result of shape inference: every per-sample intermediate shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    /// `shapes[0]` is the input; `shapes[i + 1]` is the output of layer `i`.
    pub shapes: Vec<Vec<usize>>,
}

impl ShapeTrace {
    pub fn output(&self) -> &[usize] {
        self.shapes.last().expect("trace holds at least the input")
    }

    pub fn after(&self, layer: usize) -> &[usize] {
        &self.shapes[layer + 1]
    }
}

fn trace(input: &[usize], layers: &[Layer]) -> Result<ShapeTrace> {
    if input.is_empty() || input.contains(&0) {
        return Err(CoreError::config(format!("invalid input shape {input:?}")));
    }
    let mut shapes = vec![input.to_vec()];
    for layer in layers {
        let next = layer.output_shape(shapes.last().unwrap())?;
        shapes.push(next);
    }
    Ok(ShapeTrace { shapes })
}

impl NetworkSpec {
    pub fn pathway(&self, modality: Modality) -> &PathwaySpec {
        match modality {
            Modality::Image => &self.vision,
            Modality::Sound => &self.sound,
            Modality::Text => &self.text,
        }
    }

    pub fn stage_layers(&self, stage: Stage) -> (&[usize], &[Layer]) {
        match stage {
            Stage::Vision => (&self.vision.input_shape, &self.vision.layers),
            Stage::Sound => (&self.sound.input_shape, &self.sound.layers),
            Stage::Text => (&self.text.input_shape, &self.text.layers),
            Stage::Shared => (std::slice::from_ref(&self.bottleneck_dim), &self.shared),
        }
    }

    pub fn trace(&self, stage: Stage) -> Result<ShapeTrace> {
        let (input, layers) = self.stage_layers(stage);
        trace(input, layers).map_err(|e| match e {
            CoreError::Config(msg) => CoreError::config(format!("{}: {msg}", stage.as_str())),
            other => other,
        })
    }

    /// Checks every structural invariant and returns the parameter groups.
    pub fn validate(&self) -> Result<Vec<ParamGroup>> {
        if self.bottleneck_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::config("bottleneck and output dims must be positive"));
        }
        for m in Modality::ALL {
            let stage = Stage::from(m);
            let t = self.trace(stage)?;
            let (_, layers) = self.stage_layers(stage);
            if layers.contains(&Layer::Softmax) {
                return Err(CoreError::config(format!("{}: softmax inside a pathway", stage.as_str())));
            }
            let width: usize = t.output().iter().product();
            if width != self.bottleneck_dim {
                return Err(CoreError::config(format!(
                    "{} pathway ends in {:?} ({width} values), bottleneck is {}",
                    stage.as_str(),
                    t.output(),
                    self.bottleneck_dim
                )));
            }
        }
        let shared = self.trace(Stage::Shared)?;
        let n = self.shared.len();
        let tail_ok = n >= 2
            && self.shared[n - 2] == Layer::Fc { units: self.output_dim }
            && self.shared[n - 1] == Layer::Softmax;
        if !tail_ok {
            return Err(CoreError::config(format!(
                "shared trunk must end in fc({}) followed by softmax",
                self.output_dim
            )));
        }
        if self.shared[..n - 1].contains(&Layer::Softmax) {
            return Err(CoreError::config("softmax before the end of the shared trunk"));
        }
        if shared.shapes[1..].iter().any(|s| s.len() != 1) {
            return Err(CoreError::config("shared trunk must consist of fully connected layers"));
        }
        if self.hidden_layer_indices().len() < 2 {
            return Err(CoreError::config("shared trunk needs at least two hidden relu layers"));
        }
        Ok(self.param_groups_unchecked())
    }

    /// Indices of the shared-trunk ReLU layers, i.e. the hidden activations.
    pub fn hidden_layer_indices(&self) -> Vec<usize> {
        self.shared
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Layer::Relu)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let Ok(t) = self.trace(Stage::Shared) else {
            return Vec::new();
        };
        self.hidden_layer_indices()
            .into_iter()
            .map(|i| t.after(i)[0])
            .collect()
    }

    fn param_groups_unchecked(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        for stage in Stage::ALL {
            let Ok(t) = self.trace(stage) else { continue };
            let (_, layers) = self.stage_layers(stage);
            let (mut convs, mut fcs) = (0, 0);
            for (i, layer) in layers.iter().enumerate() {
                let Some(kind) = layer.param_kind() else { continue };
                let ordinal = if kind == "conv" {
                    convs += 1;
                    convs
                } else {
                    fcs += 1;
                    fcs
                };
                let (w, b) = layer.param_shapes(&t.shapes[i]).unwrap();
                groups.push(ParamGroup {
                    name: format!("{}.{kind}{ordinal}", stage.as_str()),
                    stage,
                    layer_index: i,
                    weight_shape: w,
                    bias_shape: b,
                });
            }
        }
        groups
    }

    pub fn param_groups(&self) -> Result<Vec<ParamGroup>> {
        self.validate()
    }

    /// Expected shape of every named parameter tensor.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(self
            .validate()?
            .into_iter()
            .flat_map(|g| [(g.weight(), g.weight_shape.clone()), (g.bias(), g.bias_shape)])
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)
            .map_err(|e| CoreError::config(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

const PAPER_BOTTLENECK: usize = 9216;
const PAPER_HIDDEN: usize = 4096;
const PAPER_OUTPUT: usize = 1000;

/// Full-size architecture: 257×500 spectrograms, 300×16 word matrices and
/// 227×227 images meeting in a 9216-d bottleneck, then 4096/4096/1000.
pub fn default_paper_spec() -> NetworkSpec {
    sized_spec(|w| w, paper_vision(), PAPER_BOTTLENECK)
}

fn paper_vision() -> PathwaySpec {
    use Layer::*;
    PathwaySpec {
        input_shape: vec![3, 227, 227],
        layers: vec![
            Conv2d { filters: 96, kernel: 11, stride: 4 },
            Relu,
            MaxPool2d { window: 3, stride: 2 },
            Conv2d { filters: 256, kernel: 5, stride: 1 },
            Relu,
            MaxPool2d { window: 3, stride: 2 },
            Conv2d { filters: 384, kernel: 3, stride: 1 },
            Relu,
            Conv2d { filters: 384, kernel: 3, stride: 1 },
            Relu,
            Conv2d { filters: 256, kernel: 3, stride: 1 },
            Relu,
            MaxPool2d { window: 3, stride: 2 },
        ],
    }
}

/// Builds the sound/text/shared stacks with every width passed through `w`.
fn sized_spec(w: impl Fn(usize) -> usize, vision: PathwaySpec, bottleneck: usize) -> NetworkSpec {
    use Layer::*;
    let sound = PathwaySpec {
        input_shape: vec![257, 500],
        layers: vec![
            Conv1d { filters: w(128), kernel: 11 },
            Relu,
            MaxPool1d { factor: 5 },
            Conv1d { filters: w(256), kernel: 5 },
            Relu,
            MaxPool1d { factor: 5 },
            Conv1d { filters: w(256), kernel: 3 },
            Relu,
            MaxPool1d { factor: 5 },
            Fc { units: bottleneck },
            Relu,
        ],
    };
    let text = PathwaySpec {
        input_shape: vec![300, 16],
        layers: vec![
            Conv1d { filters: w(300), kernel: 3 },
            Relu,
            Conv1d { filters: w(300), kernel: 3 },
            Relu,
            MaxPool1d { factor: 2 },
            Conv1d { filters: w(300), kernel: 3 },
            Relu,
            MaxPool1d { factor: 2 },
            Fc { units: bottleneck },
            Relu,
        ],
    };
    let shared = vec![
        Fc { units: w(PAPER_HIDDEN) },
        Relu,
        Fc { units: w(PAPER_HIDDEN) },
        Relu,
        Fc { units: w(PAPER_OUTPUT) },
        Softmax,
    ];
    NetworkSpec {
        vision,
        sound,
        text,
        shared,
        bottleneck_dim: bottleneck,
        output_dim: w(PAPER_OUTPUT),
    }
}

/// Scales `width` and rounds to the nearest multiple of 8 (halves round up).
pub fn scaled_width(width: usize, scale: f64) -> usize {
    let eighths = width as f64 * scale / 8.0;
    (eighths + 0.5).floor() as usize * 8
}

/// Narrowed architecture for desk-scale runs.
///
/// All widths are multiplied by `scale` and rounded to a multiple of 8. For
/// `scale < 1` the vision pathway becomes three 3×3 conv/pool blocks over a
/// 32×32 image followed by a projection to the bottleneck; `scale == 1`
/// returns [`default_paper_spec`].
pub fn desk_spec(scale: f64) -> Result<NetworkSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(CoreError::config(format!("scale must be in (0, 1], got {scale}")));
    }
    if scale == 1.0 {
        return Ok(default_paper_spec());
    }
    let widths = [96, 128, 256, 300, PAPER_HIDDEN, PAPER_OUTPUT, PAPER_BOTTLENECK];
    if let Some(&w) = widths.iter().find(|&&w| scaled_width(w, scale) == 0) {
        return Err(CoreError::config(format!(
            "scale {scale} shrinks a {w}-wide layer to zero width"
        )));
    }
    let w = |n: usize| scaled_width(n, scale);
    let bottleneck = w(PAPER_BOTTLENECK);
    use Layer::*;
    let vision = PathwaySpec {
        input_shape: vec![3, 32, 32],
        layers: vec![
            Conv2d { filters: w(96), kernel: 3, stride: 1 },
            Relu,
            MaxPool2d { window: 2, stride: 2 },
            Conv2d { filters: w(256), kernel: 3, stride: 1 },
            Relu,
            MaxPool2d { window: 2, stride: 2 },
            Conv2d { filters: w(256), kernel: 3, stride: 1 },
            Relu,
            MaxPool2d { window: 2, stride: 2 },
            Fc { units: bottleneck },
            Relu,
        ],
    };
    let spec = sized_spec(w, vision, bottleneck);
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_spec_shapes() {
        let spec = default_paper_spec();
        spec.validate().unwrap();
        let sound = spec.trace(Stage::Sound).unwrap();
        assert_eq!(sound.after(8), [256, 4]);
        let text = spec.trace(Stage::Text).unwrap();
        assert_eq!(text.after(7), [300, 4]);
        let vision = spec.trace(Stage::Vision).unwrap();
        assert_eq!(vision.output(), [256, 6, 6]);
        assert_eq!(spec.hidden_widths(), [4096, 4096]);
        assert_eq!(spec.output_dim, 1000);
    }

    #[test]
    fn desk_scaling_rule() {
        assert_eq!(desk_spec(1.0).unwrap(), default_paper_spec());
        let s = desk_spec(1.0 / 16.0).unwrap();
        assert_eq!(s.bottleneck_dim, 576);
        assert_eq!(s.hidden_widths(), [256, 256]);
        assert_eq!(s.output_dim, 64);
        assert_eq!(s.sound.layers[0], Layer::Conv1d { filters: 8, kernel: 11 });
        assert!(matches!(desk_spec(0.001), Err(CoreError::Config(_))));
        assert!(desk_spec(0.0).is_err());
        assert!(desk_spec(1.5).is_err());
        assert_eq!(scaled_width(100, 0.2), 24);
        assert_eq!(scaled_width(20, 1.0), 24);
    }

    #[test]
    fn param_names_are_unique_and_stable() {
        let spec = desk_spec(0.125).unwrap();
        let names: Vec<String> = spec.param_groups().unwrap().into_iter().map(|g| g.name).collect();
        assert!(names.contains(&"sound.conv1".to_string()));
        assert!(names.contains(&"shared.fc3".to_string()));
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn rejects_mismatched_bottleneck_and_bad_tail() {
        let mut spec = desk_spec(0.125).unwrap();
        spec.text.layers[8] = Layer::Fc { units: 10 };
        assert!(spec.validate().unwrap_err().to_string().contains("text"));
        let mut spec = desk_spec(0.125).unwrap();
        spec.shared.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = desk_spec(0.25).unwrap();
        let back = NetworkSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }
}

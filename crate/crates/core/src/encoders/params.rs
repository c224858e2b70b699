use std::collections::BTreeMap;
use std::sync::Arc;

use aligned_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{NetworkSpec, Stage};
use crate::error::{CoreError, Result};

/// Named parameter tensors for a [`NetworkSpec`].
///
/// Tensors are reference counted so that graph leaves alias the stored
/// values; mutation goes through copy-on-write.
#[derive(Clone, Debug)]
pub struct ModelParams {
    spec: NetworkSpec,
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((a, x), (b, y))| a == b && bitwise_eq(x, y))
    }
}

/// Same shape and bit-identical values.
pub fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// 64-bit FNV-1a, used to derive a per-parameter random stream.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Gaussian weights with standard deviation `sigma`, zero biases.
///
/// Each tensor draws from its own stream keyed by `(seed, name)`, so any
/// subset of stages initializes identically to the full network.
pub fn init_params(spec: &NetworkSpec, seed: u64, sigma: f64) -> Result<ModelParams> {
    init_stages(spec, seed, sigma, &Stage::ALL)
}

pub fn init_stages(
    spec: &NetworkSpec,
    seed: u64,
    sigma: f64,
    stages: &[Stage],
) -> Result<ModelParams> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CoreError::config(format!("init sigma must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut tensors = BTreeMap::new();
    for group in spec.validate()? {
        if !stages.contains(&group.stage) {
            continue;
        }
        let name = group.weight();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        let n: usize = group.weight_shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        tensors.insert(name, Arc::new(Tensor::new(group.weight_shape.clone(), data)?));
        tensors.insert(group.bias(), Arc::new(Tensor::zeros(&group.bias_shape)));
    }
    Ok(ModelParams {
        spec: spec.clone(),
        tensors,
    })
}

impl ModelParams {
    /// Assembles parameters from named tensors, checking names and shapes
    /// against the spec. Missing stages are allowed; unknown or misshapen
    /// tensors are not.
    pub fn from_tensors(spec: NetworkSpec, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let expected: BTreeMap<String, Vec<usize>> = spec.param_shapes()?.into_iter().collect();
        for (name, t) in &tensors {
            match expected.get(name) {
                None => {
                    return Err(CoreError::Contract(format!(
                        "tensor {name} is not part of the network spec"
                    )))
                }
                Some(shape) if shape.as_slice() != t.shape() => {
                    return Err(CoreError::Contract(format!(
                        "tensor {name} has shape {:?}, spec expects {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(ModelParams {
            spec,
            tensors: tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name).map(Arc::as_ref)
    }

    pub fn shared(&self, name: &str) -> Result<&Arc<Tensor>> {
        self.tensors
            .get(name)
            .ok_or_else(|| CoreError::Contract(format!("missing parameter {name}")))
    }

    /// Mutable access; clones the tensor first if a graph still holds it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Names of tensors belonging to the shared trunk.
    pub fn shared_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|k| k.starts_with("shared."))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::desk_spec;

    #[test]
    fn init_is_reproducible_and_seed_dependent() {
        let spec = desk_spec(0.0625).unwrap();
        let a = init_params(&spec, 7, 0.01).unwrap();
        let b = init_params(&spec, 7, 0.01).unwrap();
        let c = init_params(&spec, 8, 0.01).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("shared.fc1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subset_init_matches_full_init() {
        let spec = desk_spec(0.0625).unwrap();
        let full = init_params(&spec, 3, 0.02).unwrap();
        let text = init_stages(&spec, 3, 0.02, &[Stage::Text]).unwrap();
        assert!(text.names().all(|n| n.starts_with("text.")));
        for (name, t) in text.iter() {
            assert!(bitwise_eq(t, full.get(name).unwrap()));
        }
    }

    #[test]
    fn moments_match_sigma() {
        let spec = desk_spec(0.0625).unwrap();
        let sigma = 0.01;
        let p = init_params(&spec, 11, sigma).unwrap();
        let w = p.get("shared.fc1.weight").unwrap().data();
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.05 * sigma, "mean {mean}");
        assert!((std - sigma).abs() < 0.05 * sigma, "std {std}");
    }

    #[test]
    fn rejects_nonpositive_sigma_and_bad_tensors() {
        let spec = desk_spec(0.0625).unwrap();
        assert!(init_params(&spec, 1, 0.0).is_err());
        let mut m = BTreeMap::new();
        m.insert("shared.fc1.weight".to_string(), Tensor::zeros(&[2, 2]));
        let err = ModelParams::from_tensors(spec, m).unwrap_err();
        assert!(err.to_string().contains("shared.fc1.weight"));
    }
}

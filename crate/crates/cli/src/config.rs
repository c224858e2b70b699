//! JSON configuration files for each command.

use std::path::Path;

use aligned_core::data::{SplitSizes, SyntheticWorld};
use aligned_core::encoders::{default_paper_spec, desk_spec, NetworkSpec, Tap};
use aligned_core::evaluation::{RetrievalOptions, RidgeConfig, SvmConfig};
use aligned_core::training::TrainConfig;
use aligned_core::{CoreError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads and parses a JSON config; parse failures are configuration errors.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
    let parsed = T::deserialize(&value).map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
    Ok((parsed, value))
}

pub fn parse_config<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T> {
    T::deserialize(value).map_err(|e| CoreError::config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub world: SyntheticWorld,
    /// Number of (image, sound, text) triples.
    pub pairs: usize,
    #[serde(default)]
    pub splits: SplitSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    /// Every width multiplied by `scale`; 32×32 images.
    Desk { scale: f64 },
    /// Full-size architecture.
    Paper,
    Custom { spec: NetworkSpec },
}

impl NetworkConfig {
    pub fn spec(&self) -> Result<NetworkSpec> {
        let spec = match self {
            NetworkConfig::Desk { scale } => desk_spec(*scale)?,
            NetworkConfig::Paper => default_paper_spec(),
            NetworkConfig::Custom { spec } => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn train_split() -> String {
    "train".into()
}

fn test_split() -> String {
    "test".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Manifest split whose pairs are trained on.
    #[serde(default = "train_split")]
    pub split: String,
}

fn probe_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    /// Split evaluated on.
    #[serde(default = "test_split")]
    pub split: String,
    /// Split the classifiers and the regression baseline are fit on.
    #[serde(default = "train_split")]
    pub train_split: String,
    /// Activation compared across modalities; defaults to the last hidden layer.
    #[serde(default)]
    pub tap: Option<Tap>,
    #[serde(default)]
    pub retrieval: RetrievalOptions,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    /// Number of classes; defaults to one more than the largest label.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default = "probe_k")]
    pub probe_k: usize,
    /// Checked against the checkpoint when given.
    #[serde(default)]
    pub network: Option<NetworkConfig>,
}

impl EvalConfig {
    pub fn retrieval_options(&self) -> RetrievalOptions {
        RetrievalOptions {
            seed: self.seed,
            ..self.retrieval.clone()
        }
    }
}

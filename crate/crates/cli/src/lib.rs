//! Command implementations behind the `aligned` binary: synthetic data
//! generation, training, evaluation and manifest reruns. Every command
//! writes only under its output directory and records a [`RunManifest`].

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{eval_cmd, gen_data, rerun, train_cmd, Task};
pub use manifest::{RunManifest, RUN_MANIFEST};

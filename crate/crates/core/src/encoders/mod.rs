//! Modality pathways and the shared trunk.
//!
//! A [`NetworkSpec`] declares each stack; [`init_params`] builds the named
//! tensors and [`encode`] wires them into an autodiff graph. Parameters are
//! bound lazily through a [`Binder`] so both modalities of a pair feed the
//! very same shared-trunk leaves.

mod forward;
mod params;
mod spec;

pub use forward::{encode, encode_bottleneck, forward, forward_tap, run_stage, Binder, Encoded, Tap};
pub use params::{init_params, init_stages, ModelParams};
pub use params::bitwise_eq;
pub(crate) use params::fnv1a;
pub use spec::{
    default_paper_spec, desk_spec, scaled_width, Layer, NetworkSpec, ParamGroup, PathwaySpec,
    ShapeTrace, Stage,
};

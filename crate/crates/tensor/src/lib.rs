//! Dense `f64` tensors and a small reverse-mode autodiff tape.
//!
//! The operation set is deliberately narrow: fully connected layers, 1-D and
//! 2-D "same" convolutions, max pooling, ReLU, softmax, row-wise cosine
//! similarity, KL divergence and the handful of elementwise reductions the
//! training objectives are assembled from.

mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_against, gradient_check_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Tensor, TENSOR_MAGIC};

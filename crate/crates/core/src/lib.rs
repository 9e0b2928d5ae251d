//! ConvNN: one neighbor-selection-and-aggregation operator that specializes
//! to convolution (spatial neighbors, constant weights) and to cosine
//! attention (all neighbors, softmax weights, unit depthwise aggregation).

pub mod autodiff;
pub mod convnn;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod neighbor;
pub mod model;
pub mod oracles;
pub mod tensor;

pub use autodiff::{Conv1dKind, Gradients, IndexMatrix, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

//! Dense `f64` tensors, a reverse-mode tape, parameter storage with the
//! binary checkpoint format, and the AdamW optimizer.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{adamw_step, AdamWConfig};
pub use params::{ModelParams, Param, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Tape, Var};
pub use tensor::{gelu, layer_norm, matmul, softmax, Tensor};

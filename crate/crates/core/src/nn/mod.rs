//! A small dense-network toolkit with manual reverse-mode gradients, shared
//! by the autoencoder and the stand-in language model.

mod block;
pub mod checkpoint;
pub mod init;
pub mod ops;
mod optim;
mod real;
mod tensor;

pub use block::{backward_stack, forward_stack, AttnShape, Block, BlockCache, BlockOptions};
pub use optim::{AdamW, CosineSchedule};
pub use real::{gemm, Real, View};
pub use tensor::{ParamSet, Tensor};

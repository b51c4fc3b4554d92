//! Dense-tensor reverse-mode differentiation and the AdamW optimizer.

pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Op, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

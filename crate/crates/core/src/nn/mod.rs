//! Dense tensors, reverse-mode differentiation and the transformer encoder.

pub mod checkpoint;
pub mod graph;
pub mod model;
mod tensor;

pub use checkpoint::{load_params, load_params_for, save_params};
pub use graph::{Focal, Gradients, Graph, Var};
pub use model::{ModelConfig, ModelParams, ParamKind};
pub use tensor::Tensor;

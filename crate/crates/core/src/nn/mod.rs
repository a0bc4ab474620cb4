//! Minimal tensor and autodiff machinery used by the linking model.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use layers::Mode;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

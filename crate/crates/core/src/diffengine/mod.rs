//! Minimal reverse-mode differentiation over dense `f64` arrays.

pub mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{Embedding, Gru, GruCell, Linear, ParamId, ParamStore, ParamVars};
pub use tape::{relaxed_nodes_created, Gradients, NonFiniteSite, Tape, Var};
pub use tensor::Tensor;

//! A small reverse-mode automatic differentiation engine over dense `f64`
//! matrices, with the transformer layers needed by the retrieval models.
//!
//! Everything runs single-threaded in a fixed order, so two runs with the
//! same inputs produce bit-identical results.

pub mod gradcheck;
mod graph;
mod matrix;
pub mod nn;
pub mod optim;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use matrix::{cosine, dot, Matrix};
pub use params::{ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
}

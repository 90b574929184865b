//! Dense matrices, differentiable primitives and reverse-mode autodiff.

pub mod finite_diff;
mod graph;
pub mod layers;
mod matrix;
pub mod ops;

pub use graph::{Graph, NodeId, OpTag};
pub use layers::{Dense, DenseIds, Mlp, MlpIds};
pub use matrix::Matrix;

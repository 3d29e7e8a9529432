//! Reverse-mode differentiation on a straight-line tape.
//!
//! A [`Graph`] records tensor operations eagerly and replays them once in
//! reverse. Leaves created with [`Graph::param`] receive gradients; leaves
//! created with [`Graph::constant`] do not. Ops outside the built-in set
//! (the rasterizer, the smoothness energy) plug in through [`CustomOp`].
//!
//! One tape is single-threaded. Independent tapes may run concurrently and
//! their gradients are merged by summation afterwards.

mod graph;
pub mod gradcheck;
pub(crate) mod linalg;
mod tensor;

use thiserror::Error;

pub use graph::{CustomHandle, CustomOp, FnOp, Gradients, Graph, Saved, Var};
pub(crate) use graph::rotation_entries;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: String },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("custom op {op}: expected {expected} inputs/gradients, got {got}")]
    CustomArity {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("{0}")]
    Custom(String),
}

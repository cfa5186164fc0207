//! Dense f64 tensors, reverse-mode differentiation, recurrent cells and a
//! finite-difference verification harness.

mod checkpoint;
mod gradcheck;
mod graph;
mod gru;
mod params;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, CoordSelection, GradCheckReport, Stencil};
pub use graph::{sigmoid, softmax, Graph, Padding, Var};
pub use gru::{bidirectional_gru, gru_cell, init_gru_cell, GruCell};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward requires a one-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("gradients requested before backward")]
    BackwardNotRun,
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

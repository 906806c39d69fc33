//! Reverse-mode differentiation substrate: tensors, parameter groups, the
//! recording tape with every layer primitive the model needs, and a central
//! finite-difference gradient checker.

mod gradcheck;
mod gru;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use gru::{gru_cell, gru_param_shapes, GruWeights};
pub use tape::{BoundParams, Gradients, Padding, Tape, Var, PREDICTION_EPS};
pub use tensor::{ParamGrads, ParamGroup, Tensor};

pub(crate) use tape::{bce_sum, kl_sum};


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("recorded graph has a cycle at node {node}")]
    Cycle { node: usize },
    #[error("non-finite value: {context}")]
    NonFinite { context: String },
    #[error("duplicate parameter id `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("{0}")]
    InvalidArgument(String),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericsError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

//! Dense matrices, a small reverse-mode tape, parameter storage, Adam and
//! finite-difference gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use params::{Gradients, ParameterSet};
pub use tape::{Tape, Var};
pub use tensor::{SparseMatrix, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("no gradients populated")]
    MissingGradients,
    #[error("parameter init: {0}")]
    Init(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

//! The region indicator predictor and its training loop.

mod config;
mod net;
mod train;

use thiserror::Error;

pub use config::{FittedTransform, SlakConfig, TargetTransform};
pub use net::{
    task_queries, CrossTaskInputs, ForwardOutput, ForwardVars, SlakModel, TaskInputs,
    EMBEDDING_TABLE, MLP_B1, MLP_B2, MLP_W1, MLP_W2,
};
pub use train::{
    cross_inputs, evaluate, fit, train_round2, train_round2_task, train_single, EpochRecord,
    SplitMetrics, TaskContext, TaskTargets, TrainOutcome,
};

use crate::dataio::DataError;
use crate::fusion::FusionError;
use crate::metapath::MetaPathError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: NumericsError,
    },
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("no saved round-1 embeddings for task `{0}`")]
    MissingEmbeddings(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
}

//! Region indicator prediction over a typed location knowledge graph.
//!
//! The pipeline: load a [`kg::KnowledgeGraph`], pick meta-paths (by language
//! model agents or fixtures, see [`agents`]), extract one sub-KG per path,
//! encode the global graph and each sub-KG with relational graph
//! convolution ([`rgcn`]), fuse the per-path region embeddings with
//! semantically queried attention ([`fusion`]), and regress indicators with a
//! small MLP head ([`model`]). A second round lets tasks exchange meta-paths
//! and saved region embeddings. [`search`] holds the random and genetic
//! meta-path search baselines; [`dataio`] the indicator tables, splits,
//! metrics and the planted-signal synthetic generator.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what training uses.

#![allow(clippy::needless_range_loop)]

pub mod agents;
pub mod dataio;
pub mod fusion;
pub mod kg;
pub mod metapath;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rgcn;
pub mod scalar;
pub mod search;
pub mod util;

use std::path::Path;

use thiserror::Error;

pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type ParameterSet = numerics::ParameterSet<f64>;
pub type Tape = numerics::Tape<f64>;
pub type AdamState = numerics::AdamState<f64>;
pub type RgcnLayer = rgcn::RgcnLayer;
pub type RgcnEncoder = rgcn::RgcnEncoder;
pub type Metrics = dataio::Metrics<f64>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kg(#[from] kg::KgError),
    #[error(transparent)]
    MetaPath(#[from] metapath::MetaPathError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Data(#[from] dataio::DataError),
    #[error(transparent)]
    Agent(#[from] agents::AgentError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Search(#[from] search::SearchError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

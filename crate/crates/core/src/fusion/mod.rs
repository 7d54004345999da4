//! Semantic-guided attention fusion and the text embedding providers that
//! supply its queries.

mod attention;
mod embed;

use thiserror::Error;

pub use attention::{
    attend, fuse, fuse_cross_task, Attended, AttentionParams, FusionOutput, QuerySource,
};
pub use embed::{fallback_vector, EmbedMode, EmbeddingProvider, RemoteEmbedConfig};

use crate::numerics::{NumericsError, Tensor};

/// Width of the semantic embeddings.
pub const EMBED_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("attention needs at least one source")]
    NoSources,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("semantic queries required")]
    MissingQueries,
    #[error("cannot embed empty text {0:?}")]
    EmptyText(String),
    #[error("embedding transport failed after retries: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub vector: Vec<f64>,
    pub source_text: String,
}

/// Stacks embeddings into an `N x 768` matrix.
pub fn stack(embeddings: &[SemanticEmbedding]) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
    if rows.is_empty() {
        return Tensor::zeros(0, EMBED_DIM);
    }
    Tensor::from_rows(&rows)
}

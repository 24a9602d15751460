//! Embedding and exact nearest-neighbour search.

mod embedding;
mod index;
mod search;

pub use embedding::{
    EmbedPayload, Embedder, EmbeddingProvider, EmbeddingVector, HttpEmbedder, StubEmbedder,
    DEFAULT_DIMENSION,
};
pub use index::{rank_order, ScoredImage, VectorIndex};
pub use search::{QueryToken, ResultPage, SearchService, DEFAULT_PAGE_SIZE};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown image: {0}")]
    UnknownImage(String),
    #[error("unknown query token: {0}")]
    UnknownToken(String),
    #[error("duplicate image id in index: {0}")]
    DuplicateId(String),
}

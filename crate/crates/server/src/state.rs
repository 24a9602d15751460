use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use genquery_core::concretize::{ConcretizeConfig, Concretizer, SuggestDebouncer, MIN_ADDED_WORDS};
use genquery_core::corpus::{CorpusError, CorpusStore};
use genquery_core::keywords::KeywordSuggester;
use genquery_core::llm::{ChatProvider, Decoding, FixtureProvider, HttpChatProvider, LlmGateway};
use genquery_core::modify::{
    Backends, GenerationBackend, GridSegmenter, HttpBackend, HttpSegmenter, ImageModifier,
    SegmentationProvider, StubBackend,
};
use genquery_core::retrieval::{Embedder, HttpEmbedder, SearchService, StubEmbedder};
use genquery_core::session::{SessionError, SessionStore};

use crate::config::{
    BackendConfig, ConfigError, EmbeddingConfig, LlmConfig, SegmenterConfig, ServiceConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("no corpus store at {0}; run `genquery ingest` first")]
    CorpusMissing(PathBuf),
    #[error("port already in use: {0}")]
    PortInUse(SocketAddr),
    #[error("corpus store holds {store}-dim embeddings but the embedder produces {embedder}")]
    DimensionMismatch { store: usize, embedder: usize },
    #[error("LLM provider: {0}")]
    Llm(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(CorpusError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn build_embedder(config: &EmbeddingConfig) -> Embedder {
    match config {
        EmbeddingConfig::Stub { seed, dimension } => {
            Embedder::new(StubEmbedder::new(*seed, *dimension))
        }
        EmbeddingConfig::Remote {
            endpoint,
            dimension,
            timeout_ms,
        } => Embedder::new(HttpEmbedder::new(
            endpoint.clone(),
            *dimension,
            Duration::from_millis(*timeout_ms),
        )),
    }
}

fn build_chat_provider(config: &LlmConfig) -> Result<Arc<dyn ChatProvider>, ServeError> {
    Ok(match config {
        LlmConfig::Fixture { dir } => {
            Arc::new(FixtureProvider::from_dir(dir).map_err(|e| ServeError::Llm(e.to_string()))?)
        }
        LlmConfig::Remote { endpoint, api_key } => {
            Arc::new(HttpChatProvider::new(endpoint.clone(), api_key.clone()))
        }
    })
}

fn build_backend(config: &BackendConfig, name: &str) -> Arc<dyn GenerationBackend> {
    match config {
        BackendConfig::Stub { seed } => Arc::new(StubBackend::new(*seed)),
        BackendConfig::Remote {
            endpoint,
            timeout_ms,
        } => Arc::new(HttpBackend::new(
            name,
            endpoint.clone(),
            Duration::from_millis(*timeout_ms),
        )),
    }
}

fn build_segmenter(config: &SegmenterConfig) -> Arc<dyn SegmentationProvider> {
    match config {
        SegmenterConfig::Grid { rows, cols } => Arc::new(GridSegmenter {
            rows: *rows,
            cols: *cols,
        }),
        SegmenterConfig::Remote {
            endpoint,
            timeout_ms,
        } => Arc::new(HttpSegmenter::new(
            endpoint.clone(),
            Duration::from_millis(*timeout_ms),
        )),
    }
}

/// Everything a request handler can reach.
pub struct AppState {
    pub config: ServiceConfig,
    pub corpus: Arc<CorpusStore>,
    pub search: Arc<SearchService>,
    pub concretizer: Concretizer,
    pub keywords: KeywordSuggester,
    pub modifier: ImageModifier,
    pub sessions: SessionStore,
    pub debouncer: SuggestDebouncer,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("corpus", &self.config.corpus_path)
            .field("images", &self.corpus.len())
            .finish()
    }
}

impl AppState {
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServeError> {
        let corpus = match CorpusStore::open(&config.corpus_path) {
            Ok(store) => Arc::new(store),
            Err(CorpusError::StoreMissing(_)) => {
                return Err(ServeError::CorpusMissing(config.corpus_path.clone()))
            }
            Err(e) => return Err(ServeError::Corpus(e)),
        };
        let embedder = build_embedder(&config.embedding);
        if embedder.dimension() != corpus.dimension() {
            return Err(ServeError::DimensionMismatch {
                store: corpus.dimension(),
                embedder: embedder.dimension(),
            });
        }
        let gateway = LlmGateway::with_concurrency(
            build_chat_provider(&config.llm)?,
            config.llm_concurrency.max(1),
        );
        let decoding = Decoding {
            deadline: config.llm_deadline(),
            ..Decoding::default()
        };
        let concretizer = Concretizer::new(
            gateway.clone(),
            ConcretizeConfig {
                suggestion_count: config.suggestion_count,
                preview_k: config.preview_k,
                min_added_words: MIN_ADDED_WORDS,
                decoding,
            },
        );
        let backends = Backends {
            segmenter: build_segmenter(&config.generation.segmenter),
            reference: build_backend(&config.generation.reference, "reference"),
            keywords: build_backend(&config.generation.keywords, "keywords"),
        };
        let modifier = ImageModifier::with_concurrency(
            corpus.clone(),
            embedder.clone(),
            backends,
            config.generation.concurrency.max(1),
        );
        let sessions = match &config.session_dir {
            Some(dir) => SessionStore::open(dir)?,
            None => SessionStore::in_memory(),
        };
        Ok(Self {
            search: Arc::new(SearchService::new(embedder, corpus.index())),
            keywords: KeywordSuggester::new(gateway, decoding),
            concretizer,
            modifier,
            sessions,
            corpus,
            debouncer: SuggestDebouncer::new(),
            config,
        })
    }
}

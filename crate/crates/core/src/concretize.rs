//! Query concretization: expand a vague text query into a fixed number of
//! more specific queries, each previewed with its top search results.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::llm::{
    concretize_bindings, render_template, Decoding, LlmError, LlmGateway, ResponseSchema,
    TemplateId, MAX_PROVIDER_CALLS,
};
use crate::retrieval::{RetrievalError, ScoredImage, SearchService};

pub const DEFAULT_SUGGESTION_COUNT: usize = 5;
pub const DEFAULT_PREVIEW_K: usize = 8;
pub const MIN_ADDED_WORDS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcretizeConfig {
    pub suggestion_count: usize,
    pub preview_k: usize,
    pub min_added_words: usize,
    pub decoding: Decoding,
}

impl Default for ConcretizeConfig {
    fn default() -> Self {
        Self {
            suggestion_count: DEFAULT_SUGGESTION_COUNT,
            preview_k: DEFAULT_PREVIEW_K,
            min_added_words: MIN_ADDED_WORDS,
            decoding: Decoding::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretizedSuggestion {
    pub query: String,
    pub explanation: String,
    pub previews: Vec<ScoredImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretizeBatch {
    pub original_query: String,
    pub explanation: String,
    pub suggestions: Vec<ConcretizedSuggestion>,
    /// Some suggestion adds fewer than the required number of words even
    /// after a retry.
    pub non_conforming: bool,
    /// Provider calls spent producing this batch.
    pub attempts: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ConcretizeError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Words `suggestion` adds over `original`: difference of case-folded
/// whitespace token counts.
pub fn added_word_count(original: &str, suggestion: &str) -> isize {
    let count = |s: &str| s.to_lowercase().split_whitespace().count() as isize;
    count(suggestion) - count(original)
}

#[derive(Debug, Clone)]
pub struct Concretizer {
    gateway: LlmGateway,
    config: ConcretizeConfig,
}

impl Concretizer {
    pub fn new(gateway: LlmGateway, config: ConcretizeConfig) -> Self {
        Self { gateway, config }
    }

    pub fn config(&self) -> &ConcretizeConfig {
        &self.config
    }

    /// Asks the model for suggestions. Shape violations (wrong count, missing
    /// fields, no JSON) are retried within the provider-call budget and end
    /// in an error; a too-short suggestion earns one retry, after which the
    /// batch is returned flagged `non_conforming`.
    pub fn suggest_queries(&self, current_query: &str) -> Result<ConcretizeBatch, ConcretizeError> {
        let query = current_query.trim();
        if query.is_empty() {
            return Err(ConcretizeError::EmptyQuery);
        }
        let bundle = render_template(TemplateId::Concretize, &concretize_bindings(query))?;
        let schema = ResponseSchema::concretize(self.config.suggestion_count);

        let mut last_error = None;
        let mut fallback: Option<ConcretizeBatch> = None;
        for attempt in 1..=MAX_PROVIDER_CALLS {
            let envelope = match self
                .gateway
                .complete_json(&bundle, &self.config.decoding, &schema)
            {
                Ok(envelope) => envelope,
                Err(e) if e.is_retryable() => {
                    tracing::debug!(attempt, error = %e, "concretize response rejected");
                    last_error = Some(e);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let explanation = envelope.text("explanation").unwrap_or_default().to_owned();
            let queries: Vec<String> = envelope
                .text_list("search_queries")
                .into_iter()
                .map(|q| q.trim().to_owned())
                .collect();
            let conforming = queries
                .iter()
                .all(|q| added_word_count(query, q) >= self.config.min_added_words as isize);
            let batch = ConcretizeBatch {
                original_query: query.to_owned(),
                suggestions: queries
                    .into_iter()
                    .map(|q| ConcretizedSuggestion {
                        query: q,
                        explanation: explanation.clone(),
                        previews: Vec::new(),
                    })
                    .collect(),
                explanation,
                non_conforming: !conforming,
                attempts: attempt,
            };
            if conforming || fallback.is_some() || attempt == MAX_PROVIDER_CALLS {
                return Ok(batch);
            }
            fallback = Some(batch);
        }
        match fallback {
            Some(batch) => Ok(batch),
            None => Err(last_error.unwrap_or(LlmError::NoJsonFound).into()),
        }
    }

    /// Fills each suggestion with the top `preview_k` hits of a text search on
    /// it. Searches run in parallel; the batch is assembled once all finish.
    pub fn attach_previews(
        &self,
        mut batch: ConcretizeBatch,
        search: &SearchService,
    ) -> Result<ConcretizeBatch, ConcretizeError> {
        let k = self.config.preview_k;
        let pages = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .suggestions
                .iter()
                .map(|s| scope.spawn(move || search.search_text(&s.query, k, 0)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("preview search panicked"))
                .collect::<Vec<_>>()
        });
        for (suggestion, page) in batch.suggestions.iter_mut().zip(pages) {
            suggestion.previews = page?.items;
        }
        Ok(batch)
    }

    pub fn concretize(
        &self,
        current_query: &str,
        search: &SearchService,
    ) -> Result<ConcretizeBatch, ConcretizeError> {
        let batch = self.suggest_queries(current_query)?;
        self.attach_previews(batch, search)
    }
}

/// Tracks the latest suggestion request per key so that a request can tell,
/// after its settle delay, whether a newer one has superseded it.
#[derive(Debug, Default)]
pub struct SuggestDebouncer {
    latest: Mutex<HashMap<String, u64>>,
}

impl SuggestDebouncer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin(&self, key: &str) -> u64 {
        let mut latest = self.latest.lock().expect("debouncer poisoned");
        let ticket = latest.get(key).copied().unwrap_or(0) + 1;
        latest.insert(key.to_owned(), ticket);
        ticket
    }

    pub fn is_current(&self, key: &str, ticket: u64) -> bool {
        self.latest.lock().expect("debouncer poisoned").get(key) == Some(&ticket)
    }
}

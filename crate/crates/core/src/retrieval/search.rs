//! Text and image search with rankings frozen per query token.
//!
//! The first call for a query computes the full ranking and stores it under a
//! fresh [`QueryToken`]. Later pages slice that snapshot, so "show more" never
//! reshuffles results even if the index grows in between.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector, RetrievalError, ScoredImage, VectorIndex};

/// Default number of results per page ("show more" click).
pub const DEFAULT_PAGE_SIZE: usize = 20;

const MAX_LIVE_TOKENS: usize = 4096;

/// Opaque handle binding result pages to one frozen ranking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryToken(String);

impl QueryToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for QueryToken {
    fn from(value: String) -> Self {
        Self(value)
    }
}

impl std::fmt::Display for QueryToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub query_token: QueryToken,
    pub items: Vec<ScoredImage>,
    pub offset: usize,
    pub exhausted: bool,
}

struct FrozenRanking {
    items: Arc<Vec<ScoredImage>>,
    cursor: usize,
}

#[derive(Default)]
struct TokenTable {
    rankings: HashMap<QueryToken, FrozenRanking>,
    order: VecDeque<QueryToken>,
}

pub struct SearchService {
    embedder: Embedder,
    index: Arc<VectorIndex>,
    tokens: Mutex<TokenTable>,
    next_token: AtomicU64,
}

impl SearchService {
    pub fn new(embedder: Embedder, index: Arc<VectorIndex>) -> Self {
        Self {
            embedder,
            index,
            tokens: Mutex::new(TokenTable::default()),
            next_token: AtomicU64::new(1),
        }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn index(&self) -> &Arc<VectorIndex> {
        &self.index
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.embedder.embed_text(text)
    }

    /// Embedding of an indexed image.
    pub fn embed_image(&self, image_id: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.index
            .get(image_id)
            .ok_or_else(|| RetrievalError::UnknownImage(image_id.to_owned()))
    }

    pub fn knn(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredImage>, RetrievalError> {
        self.index.knn(query, k)
    }

    pub fn search_text(
        &self,
        text: &str,
        k: usize,
        offset: usize,
    ) -> Result<ResultPage, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let query = self.embedder.embed_text(text)?;
        let ranking = self.index.rank_all(&query, None)?;
        Ok(self.freeze(ranking, k, offset))
    }

    /// Search by an indexed image; the query image never appears in its own
    /// results.
    pub fn search_image(
        &self,
        image_id: &str,
        k: usize,
        offset: usize,
    ) -> Result<ResultPage, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.index.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let query = self.embed_image(image_id)?;
        let ranking = self.index.rank_all(&query, Some(image_id))?;
        Ok(self.freeze(ranking, k, offset))
    }

    /// Slice `[offset, offset + k)` of a frozen ranking. Requests past the
    /// end of the snapshot come back empty and exhausted.
    pub fn page(
        &self,
        token: &QueryToken,
        k: usize,
        offset: usize,
    ) -> Result<ResultPage, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let mut table = self.tokens.lock().expect("token table poisoned");
        let frozen = table
            .rankings
            .get_mut(token)
            .ok_or_else(|| RetrievalError::UnknownToken(token.to_string()))?;
        let page = slice(token.clone(), &frozen.items, k, offset);
        frozen.cursor = frozen.cursor.max(offset + page.items.len());
        Ok(page)
    }

    /// The page following everything served so far for `token`.
    pub fn next_page(&self, token: &QueryToken, k: usize) -> Result<ResultPage, RetrievalError> {
        let cursor = {
            let table = self.tokens.lock().expect("token table poisoned");
            table
                .rankings
                .get(token)
                .map(|f| f.cursor)
                .ok_or_else(|| RetrievalError::UnknownToken(token.to_string()))?
        };
        self.page(token, k, cursor)
    }

    fn freeze(&self, ranking: Vec<ScoredImage>, k: usize, offset: usize) -> ResultPage {
        let token = QueryToken(format!(
            "qt-{}",
            self.next_token.fetch_add(1, Ordering::Relaxed)
        ));
        let items = Arc::new(ranking);
        let page = slice(token.clone(), &items, k, offset);
        let mut table = self.tokens.lock().expect("token table poisoned");
        if table.order.len() >= MAX_LIVE_TOKENS {
            if let Some(old) = table.order.pop_front() {
                table.rankings.remove(&old);
            }
        }
        table.order.push_back(token.clone());
        table.rankings.insert(
            token,
            FrozenRanking {
                items,
                cursor: offset + page.items.len(),
            },
        );
        page
    }
}

fn slice(token: QueryToken, ranking: &[ScoredImage], k: usize, offset: usize) -> ResultPage {
    let start = offset.min(ranking.len());
    let end = offset.saturating_add(k).min(ranking.len());
    ResultPage {
        query_token: token,
        items: ranking[start..end].to_vec(),
        offset,
        exhausted: end >= ranking.len(),
    }
}

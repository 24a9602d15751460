//! Keyword suggestion for keyword-based modification: five terms close to the
//! designer's current intent and five that steer away from it, none of which
//! the designer has already used.
//!
//! Custom keywords typed by the user never pass through here; they go
//! straight to generation unfiltered.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, CorpusStore};
use crate::llm::{
    keyword_bindings, render_template, Decoding, LlmError, LlmGateway, LlmJsonEnvelope,
    ResponseSchema, TemplateId, MAX_PROVIDER_CALLS,
};
use crate::session::{recent_text_queries, saved_images, SessionError, SessionEvent, SessionStore};

pub const KEYWORD_COUNT: usize = 5;
pub const CONTEXT_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub current_image_description: String,
    /// Most recent last.
    pub recent_queries: Vec<String>,
    /// Most recent last.
    pub saved_descriptions: Vec<String>,
}

impl ContextBundle {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.current_image_description.as_str())
            .chain(self.recent_queries.iter().map(String::as_str))
            .chain(self.saved_descriptions.iter().map(String::as_str))
    }

    /// Case-folded token set of every context text.
    pub fn vocabulary(&self) -> HashSet<String> {
        self.texts().flat_map(tokenize).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSuggestion {
    pub explanation: String,
    pub aligned: Vec<String>,
    pub diversified: Vec<String>,
    /// Filtering left fewer than five terms in a list even after a retry.
    pub short: bool,
    pub attempts: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum KeywordError {
    #[error("unknown session: {0}")]
    UnknownSession(String),
    #[error("unknown image: {0}")]
    UnknownImage(String),
    #[error(transparent)]
    Session(SessionError),
    #[error(transparent)]
    Corpus(CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Case-folded split on non-alphanumerics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collects the last five text queries and the descriptions of the last five
/// currently saved images from `session_id`, plus the description of
/// `image_id`.
pub fn build_context(
    sessions: &SessionStore,
    corpus: &CorpusStore,
    session_id: &str,
    image_id: &str,
) -> Result<ContextBundle, KeywordError> {
    let events = match sessions.events(session_id) {
        Ok(events) => events,
        Err(SessionError::UnknownSession(id)) => return Err(KeywordError::UnknownSession(id)),
        Err(e) => return Err(KeywordError::Session(e)),
    };
    context_from_events(&events, corpus, image_id)
}

/// [`build_context`] over an event list already in hand. An empty list
/// yields empty history lists.
pub fn context_from_events(
    events: &[SessionEvent],
    corpus: &CorpusStore,
    image_id: &str,
) -> Result<ContextBundle, KeywordError> {
    let current = match corpus.get_image(image_id) {
        Ok(record) => record,
        Err(CorpusError::NotFound(id)) => return Err(KeywordError::UnknownImage(id)),
        Err(e) => return Err(KeywordError::Corpus(e)),
    };
    let saved: Vec<String> = saved_images(events)
        .iter()
        .filter_map(|id| corpus.get_image(id).ok())
        .map(|r| r.description)
        .collect();
    Ok(ContextBundle {
        current_image_description: current.description,
        recent_queries: recent_text_queries(events, CONTEXT_DEPTH),
        saved_descriptions: saved[saved.len().saturating_sub(CONTEXT_DEPTH)..].to_vec(),
    })
}

/// Keeps the terms that are single words and share no token with the
/// context. Duplicates collapse to their first occurrence; order is kept.
pub fn novelty_filter(terms: &[String], context: &ContextBundle) -> Vec<String> {
    novelty_split(terms, &context.vocabulary()).0
}

/// `(kept, dropped)`; dropped terms are returned trimmed.
fn novelty_split(terms: &[String], vocabulary: &HashSet<String>) -> (Vec<String>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for term in terms {
        let term = term.trim();
        if !seen.insert(term.to_lowercase()) {
            continue;
        }
        let tokens = tokenize(term);
        let phrase = term.split_whitespace().count() > 1;
        if tokens.is_empty() || phrase || tokens.iter().any(|t| vocabulary.contains(t)) {
            dropped.push(term.to_owned());
        } else {
            kept.push(term.to_owned());
        }
    }
    (kept, dropped)
}

#[derive(Debug, Default)]
struct Filtered {
    aligned: Vec<String>,
    diversified: Vec<String>,
    dropped: Vec<String>,
}

fn filter_envelope(envelope: &LlmJsonEnvelope, vocabulary: &HashSet<String>) -> Filtered {
    let (aligned, mut dropped) =
        novelty_split(&envelope.text_list("aligned_search_terms"), vocabulary);
    let (diversified, more) =
        novelty_split(&envelope.text_list("diversified_search_terms"), vocabulary);
    dropped.extend(more);
    let aligned_folded: HashSet<String> = aligned.iter().map(|t| t.to_lowercase()).collect();
    let (overlap, diversified): (Vec<String>, Vec<String>) = diversified
        .into_iter()
        .partition(|t| aligned_folded.contains(&t.to_lowercase()));
    dropped.extend(overlap);
    Filtered {
        aligned,
        diversified,
        dropped,
    }
}

/// Appends terms from `extra` not already in `list` (case-folded, and not in
/// `exclude`) until `list` holds `cap` entries.
fn top_up(list: &mut Vec<String>, extra: &[String], exclude: &[String], cap: usize) {
    for term in extra {
        if list.len() >= cap {
            break;
        }
        let folded = term.to_lowercase();
        let taken = |l: &[String]| l.iter().any(|t| t.to_lowercase() == folded);
        if !taken(list) && !taken(exclude) {
            list.push(term.clone());
        }
    }
}

#[derive(Debug, Clone)]
pub struct KeywordSuggester {
    gateway: LlmGateway,
    decoding: Decoding,
}

impl KeywordSuggester {
    pub fn new(gateway: LlmGateway, decoding: Decoding) -> Self {
        Self { gateway, decoding }
    }

    fn request(
        &self,
        context: &ContextBundle,
        avoid: &[String],
        calls: &mut u32,
    ) -> Result<LlmJsonEnvelope, LlmError> {
        let mut history = context.recent_queries.clone();
        history.extend(avoid.iter().cloned());
        let bundle = render_template(
            TemplateId::Keywords,
            &keyword_bindings(
                &context.current_image_description,
                &history,
                &context.saved_descriptions,
            ),
        )?;
        let schema = ResponseSchema::keywords(KEYWORD_COUNT);
        let mut last = LlmError::NoJsonFound;
        while *calls < MAX_PROVIDER_CALLS {
            *calls += 1;
            match self.gateway.complete_json(&bundle, &self.decoding, &schema) {
                Ok(envelope) => return Ok(envelope),
                Err(e) if e.is_retryable() => {
                    tracing::debug!(attempt = *calls, error = %e, "keyword response rejected");
                    last = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    /// Runs the keyword prompt and filters its answer against the context.
    /// If filtering leaves either list short, the model is asked once more
    /// with the rejected terms added to the history it must avoid; survivors
    /// of that answer top up the first one.
    pub fn suggest_keywords(
        &self,
        context: &ContextBundle,
    ) -> Result<KeywordSuggestion, KeywordError> {
        let vocabulary = context.vocabulary();
        let mut calls = 0;
        let envelope = self.request(context, &[], &mut calls)?;
        let explanation = envelope.text("explanation").unwrap_or_default().to_owned();
        let mut result = filter_envelope(&envelope, &vocabulary);

        let is_short =
            |f: &Filtered| f.aligned.len() < KEYWORD_COUNT || f.diversified.len() < KEYWORD_COUNT;
        if is_short(&result) && calls < MAX_PROVIDER_CALLS {
            match self.request(context, &result.dropped, &mut calls) {
                Ok(retry) => {
                    let extra = filter_envelope(&retry, &vocabulary);
                    top_up(
                        &mut result.aligned,
                        &extra.aligned,
                        &result.diversified,
                        KEYWORD_COUNT,
                    );
                    top_up(
                        &mut result.diversified,
                        &extra.diversified,
                        &result.aligned,
                        KEYWORD_COUNT,
                    );
                }
                Err(e) if e.is_retryable() => {
                    tracing::debug!(error = %e, "keyword retry unusable; keeping first answer");
                }
                Err(e) => return Err(e.into()),
            }
        }
        result.aligned.truncate(KEYWORD_COUNT);
        result.diversified.truncate(KEYWORD_COUNT);
        Ok(KeywordSuggestion {
            explanation,
            short: is_short(&result),
            aligned: result.aligned,
            diversified: result.diversified,
            attempts: calls,
        })
    }
}

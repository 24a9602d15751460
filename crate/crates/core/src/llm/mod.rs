//! Provider-agnostic chat completion with templated prompts and strict JSON
//! response parsing.

mod json;
mod provider;
mod template;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

pub use json::{
    extract_first_object, parse_json_object, FieldKind, FieldRule, LlmJsonEnvelope, ResponseSchema,
};
pub use provider::{
    ChatProvider, ChatRequest, FixtureProvider, HttpChatProvider, ScriptedProvider,
};
pub use template::{
    concretize_bindings, keyword_bindings, render_template, Bindings, PromptBundle, TemplateId,
    SYSTEM_PROMPT,
};

use crate::limiter::Limiter;

/// Upper bound on provider calls for one pipeline invocation (first attempt
/// plus two retries).
pub const MAX_PROVIDER_CALLS: u32 = 3;

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("template placeholder `{0}` is not bound")]
    MissingBinding(String),
    #[error("LLM provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("LLM call exceeded its deadline of {0:?}")]
    DeadlineExceeded(Duration),
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("model output violates the response schema: {0}")]
    SchemaViolation(String),
}

impl LlmError {
    /// Output-shape failures that a fresh completion may fix.
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::NoJsonFound | LlmError::SchemaViolation(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoding {
    pub temperature: f32,
    pub max_tokens: u32,
    pub deadline: Duration,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 1024,
            deadline: Duration::from_secs(30),
        }
    }
}

/// Shared entry point for all LLM calls. Cheap to clone.
#[derive(Clone)]
pub struct LlmGateway {
    provider: Arc<dyn ChatProvider>,
    limiter: Arc<Limiter>,
    calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("concurrency", &self.limiter.capacity())
            .field("calls", &self.calls())
            .finish()
    }
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self::with_concurrency(provider, DEFAULT_CONCURRENCY)
    }

    pub fn with_concurrency(provider: Arc<dyn ChatProvider>, max_in_flight: usize) -> Self {
        Self {
            provider,
            limiter: Arc::new(Limiter::new(max_in_flight)),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Provider calls issued through this gateway.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Raw completion text, or `DeadlineExceeded` once `decoding.deadline`
    /// elapses. A call that overruns keeps its concurrency slot until the
    /// provider actually returns.
    pub fn complete(&self, bundle: &PromptBundle, decoding: &Decoding) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let request = ChatRequest {
            template_id: bundle.template_id,
            system: bundle.system_prompt.clone(),
            user: bundle.user_prompt.clone(),
            temperature: decoding.temperature,
            max_tokens: decoding.max_tokens,
        };
        let provider = self.provider.clone();
        let limiter = self.limiter.clone();
        let deadline = decoding.deadline;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _permit = limiter.acquire();
            let _ = tx.send(provider.complete(&request, deadline));
        });
        let text = match rx.recv_timeout(deadline) {
            Ok(result) => result?,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(LlmError::DeadlineExceeded(deadline))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(LlmError::ProviderUnavailable(
                    "provider call aborted".into(),
                ))
            }
        };
        if text.trim().is_empty() {
            return Err(LlmError::ProviderUnavailable("empty completion".into()));
        }
        Ok(text)
    }

    /// One completion parsed against `schema`.
    pub fn complete_json(
        &self,
        bundle: &PromptBundle,
        decoding: &Decoding,
        schema: &ResponseSchema,
    ) -> Result<LlmJsonEnvelope, LlmError> {
        let raw = self.complete(bundle, decoding)?;
        parse_json_object(&raw, schema)
    }
}

//! Chat-completion providers: canned fixtures, scripted responses, and a
//! remote endpoint speaking `{system, user, temperature, max_tokens} -> {text}`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmError, TemplateId};
use crate::remote::{self, RemoteError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    #[serde(skip)]
    pub template_id: TemplateId,
    pub system: String,
    pub user: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, LlmError>;
}

/// Cycles through a fixed list of responses per template.
#[derive(Debug)]
pub struct ScriptedProvider {
    responses: HashMap<TemplateId, Vec<String>>,
    cursors: Mutex<HashMap<TemplateId, usize>>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self {
            responses: HashMap::new(),
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with(
        mut self,
        template: TemplateId,
        responses: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        self.responses
            .insert(template, responses.into_iter().map(Into::into).collect());
        self
    }

    /// Total provider calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for ScriptedProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest, _timeout: Duration) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let responses = self
            .responses
            .get(&request.template_id)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                LlmError::ProviderUnavailable(format!(
                    "no scripted response for {}",
                    request.template_id
                ))
            })?;
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(request.template_id).or_insert(0);
        let text = responses[*cursor % responses.len()].clone();
        *cursor += 1;
        Ok(text)
    }
}

/// Reads canned responses from a directory: `<dir>/<template_id>.txt` for a
/// single response, or `<dir>/<template_id>/*.txt` (sorted by name) for a
/// sequence that is served in a cycle.
#[derive(Debug)]
pub struct FixtureProvider {
    dir: PathBuf,
    inner: ScriptedProvider,
}

impl FixtureProvider {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(LlmError::ProviderUnavailable(format!(
                "fixture directory {} not found",
                dir.display()
            )));
        }
        let mut inner = ScriptedProvider::new();
        for template in [TemplateId::Concretize, TemplateId::Keywords] {
            let responses = load_fixture(dir, template)?;
            if !responses.is_empty() {
                inner = inner.with(template, responses);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            inner,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn calls(&self) -> usize {
        self.inner.calls()
    }
}

fn load_fixture(dir: &Path, template: TemplateId) -> Result<Vec<String>, LlmError> {
    let io_err =
        |e: std::io::Error| LlmError::ProviderUnavailable(format!("fixture read failed: {e}"));
    let single = dir.join(format!("{}.txt", template.as_str()));
    if single.is_file() {
        return Ok(vec![fs::read_to_string(single).map_err(io_err)?]);
    }
    let many = dir.join(template.as_str());
    if !many.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&many)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| fs::read_to_string(p).map_err(io_err))
        .collect()
}

impl ChatProvider for FixtureProvider {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, LlmError> {
        self.inner.complete(request, timeout)
    }
}

#[derive(Deserialize)]
struct ChatResponseBody {
    text: String,
}

/// Remote chat endpoint. Credentials, when set, go in a bearer header.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, LlmError> {
        let headers: Vec<(&str, String)> = self
            .api_key
            .iter()
            .map(|key| ("Authorization", format!("Bearer {key}")))
            .collect();
        let response: ChatResponseBody =
            remote::post_json_with_headers(&self.endpoint, request, timeout, &headers).map_err(
                |e| match e {
                    RemoteError::Timeout(d) => LlmError::DeadlineExceeded(d),
                    other => LlmError::ProviderUnavailable(other.to_string()),
                },
            )?;
        Ok(response.text)
    }
}

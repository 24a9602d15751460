//! Service configuration: a TOML file overlaid with `GENQUERY_*` environment
//! variables.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const SESSION_HEADER: &str = "x-genquery-session";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("environment variable {name}: {detail}")]
    Env { name: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Remote {
        endpoint: String,
        dimension: usize,
        #[serde(default = "default_remote_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    /// Canned completions read from `<dir>/<template>.txt` or
    /// `<dir>/<template>/*.txt`.
    Fixture { dir: PathBuf },
    Remote {
        endpoint: String,
        #[serde(default)]
        api_key: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterConfig {
    Grid {
        #[serde(default = "default_grid")]
        rows: u32,
        #[serde(default = "default_grid")]
        cols: u32,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_remote_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Stub {
        #[serde(default)]
        seed: u64,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_generation_timeout_ms")]
        timeout_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub segmenter: SegmenterConfig,
    pub reference: BackendConfig,
    pub keywords: BackendConfig,
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            segmenter: SegmenterConfig::Grid { rows: 4, cols: 4 },
            reference: BackendConfig::Stub { seed: 0 },
            keywords: BackendConfig::Stub { seed: 0 },
            concurrency: genquery_core::modify::DEFAULT_GENERATION_CONCURRENCY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub corpus_path: PathBuf,
    /// Session logs; in memory only when absent.
    pub session_dir: Option<PathBuf>,
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub embedding: EmbeddingConfig,
    pub llm: LlmConfig,
    pub generation: GenerationConfig,
    pub page_size: usize,
    pub preview_k: usize,
    pub suggestion_count: usize,
    /// Settle delay before a suggestion request is served; superseded
    /// requests for the same session are dropped.
    pub debounce_ms: u64,
    pub llm_deadline_ms: u64,
    pub llm_concurrency: usize,
}

fn default_dimension() -> usize {
    genquery_core::retrieval::DEFAULT_DIMENSION
}

fn default_remote_timeout_ms() -> u64 {
    5_000
}

fn default_generation_timeout_ms() -> u64 {
    genquery_core::modify::DEFAULT_GENERATION_DEADLINE.as_millis() as u64
}

fn default_grid() -> u32 {
    4
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::from("genquery-data/corpus"),
            session_dir: Some(PathBuf::from("genquery-data/sessions")),
            host: "127.0.0.1".into(),
            port: 8080,
            embedding: EmbeddingConfig::Stub {
                seed: 0,
                dimension: default_dimension(),
            },
            llm: LlmConfig::Fixture {
                dir: PathBuf::from("fixtures/llm"),
            },
            generation: GenerationConfig::default(),
            page_size: genquery_core::retrieval::DEFAULT_PAGE_SIZE,
            preview_k: genquery_core::concretize::DEFAULT_PREVIEW_K,
            suggestion_count: genquery_core::concretize::DEFAULT_SUGGESTION_COUNT,
            debounce_ms: 500,
            llm_deadline_ms: 30_000,
            llm_concurrency: genquery_core::llm::DEFAULT_CONCURRENCY,
        }
    }
}

impl ServiceConfig {
    /// Parses `path`; relative paths inside the file resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text).map_err(|detail| ConfigError::Parse {
            path: path.to_path_buf(),
            detail,
        })?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_path);
        if let Some(dir) = self.session_dir.as_mut() {
            fix(dir);
        }
        if let LlmConfig::Fixture { dir } = &mut self.llm {
            fix(dir);
        }
    }

    /// Applies `GENQUERY_*` overrides from the process environment.
    pub fn with_env(self) -> Result<Self, ConfigError> {
        self.with_overrides(std::env::vars())
    }

    /// Recognised names: `GENQUERY_CORPUS_PATH`, `GENQUERY_SESSION_DIR`,
    /// `GENQUERY_HOST`, `GENQUERY_PORT`, `GENQUERY_EMBEDDING_ENDPOINT`,
    /// `GENQUERY_LLM_ENDPOINT`, `GENQUERY_LLM_API_KEY`,
    /// `GENQUERY_LLM_FIXTURES`, `GENQUERY_SEGMENTER_ENDPOINT`,
    /// `GENQUERY_REFERENCE_ENDPOINT`, `GENQUERY_KEYWORDS_ENDPOINT`,
    /// `GENQUERY_DEBOUNCE_MS`. Others are ignored.
    pub fn with_overrides<I, K, V>(mut self, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut api_key = None;
        for (name, value) in vars {
            let name = name.as_ref();
            let value: String = value.into();
            let number = |v: &str| {
                v.parse::<u64>().map_err(|e| ConfigError::Env {
                    name: name.to_owned(),
                    detail: e.to_string(),
                })
            };
            match name {
                "GENQUERY_CORPUS_PATH" => self.corpus_path = value.into(),
                "GENQUERY_SESSION_DIR" => self.session_dir = Some(value.into()),
                "GENQUERY_HOST" => self.host = value,
                "GENQUERY_PORT" => {
                    self.port = u16::try_from(number(&value)?).map_err(|e| ConfigError::Env {
                        name: name.to_owned(),
                        detail: e.to_string(),
                    })?
                }
                "GENQUERY_DEBOUNCE_MS" => self.debounce_ms = number(&value)?,
                "GENQUERY_EMBEDDING_ENDPOINT" => {
                    let dimension = match &self.embedding {
                        EmbeddingConfig::Stub { dimension, .. }
                        | EmbeddingConfig::Remote { dimension, .. } => *dimension,
                    };
                    self.embedding = EmbeddingConfig::Remote {
                        endpoint: value,
                        dimension,
                        timeout_ms: default_remote_timeout_ms(),
                    };
                }
                "GENQUERY_LLM_ENDPOINT" => {
                    self.llm = LlmConfig::Remote {
                        endpoint: value,
                        api_key: match &self.llm {
                            LlmConfig::Remote { api_key, .. } => api_key.clone(),
                            LlmConfig::Fixture { .. } => None,
                        },
                    }
                }
                "GENQUERY_LLM_API_KEY" => api_key = Some(value),
                "GENQUERY_LLM_FIXTURES" => self.llm = LlmConfig::Fixture { dir: value.into() },
                "GENQUERY_SEGMENTER_ENDPOINT" => {
                    self.generation.segmenter = SegmenterConfig::Remote {
                        endpoint: value,
                        timeout_ms: default_remote_timeout_ms(),
                    }
                }
                "GENQUERY_REFERENCE_ENDPOINT" => {
                    self.generation.reference = BackendConfig::Remote {
                        endpoint: value,
                        timeout_ms: default_generation_timeout_ms(),
                    }
                }
                "GENQUERY_KEYWORDS_ENDPOINT" => {
                    self.generation.keywords = BackendConfig::Remote {
                        endpoint: value,
                        timeout_ms: default_generation_timeout_ms(),
                    }
                }
                _ => {}
            }
        }
        if let (Some(key), LlmConfig::Remote { api_key, .. }) = (api_key, &mut self.llm) {
            *api_key = Some(key);
        }
        Ok(self)
    }

    pub fn llm_deadline(&self) -> Duration {
        Duration::from_millis(self.llm_deadline_ms)
    }

    pub fn embedding_dimension(&self) -> usize {
        match &self.embedding {
            EmbeddingConfig::Stub { dimension, .. } | EmbeddingConfig::Remote { dimension, .. } => {
                *dimension
            }
        }
    }
}

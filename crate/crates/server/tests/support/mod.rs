//! Fixture corpus, canned LLM responses and a small blocking HTTP client for
//! driving a live server.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use genquery_core::corpus::CorpusStore;
use genquery_server::config::{EmbeddingConfig, LlmConfig};
use genquery_server::{build_embedder, start, RunningServer, ServiceConfig, SESSION_HEADER};
use image::{Rgb, RgbImage};
use serde_json::Value;

pub const DESCRIPTIONS: &[&str] = &[
    "vintage hiking poster with mountain landscape",
    "minimalist typography poster in black and white",
    "green forest illustration with mountains",
    "retro travel poster of a lake at dawn",
    "flat illustration of a forest campsite",
    "bold geometric poster with orange triangles",
    "hand drawn trail map with pine trees",
    "watercolor alpine meadow with wildflowers",
    "neon city skyline at night",
    "pastel desert dunes under a pink sky",
    "woodcut print of a mountain cabin",
    "art deco national park poster",
    "mountain climber silhouette against sunset",
    "snowy peaks in blue duotone",
    "abstract brush strokes in earth tones",
    "vintage camping badge with tent and fire",
    "paper cut layers of rolling hills",
    "isometric illustration of a hiking trail",
    "black ink sketch of a waterfall",
    "sunrise over misty valley photograph",
    "collage of trail signs and maps",
    "bauhaus style poster with circles",
    "retro 70s color palette poster with stripes",
    "forest path with dappled light",
];

pub const CONCRETIZE_RESPONSE: &str = r#"Here is my answer:
{"explanation": "The query leaves the visual style, palette and subject of the poster open.",
 "search_queries": [
   "vintage hiking poster design with mountain landscape",
   "minimalistic typography hiking poster design on white",
   "hiking poster design in retro 70s color palette",
   "hand drawn hiking poster design with forest trail",
   "hiking poster design featuring bold geometric shapes"]}"#;

pub const KEYWORDS_RESPONSE: &str = r#"{"explanation": "The history centres on mountain scenery; the new terms move toward graphic styles.",
 "aligned_search_terms": ["alpine", "summit", "ridge", "outdoor", "trek"],
 "diversified_search_terms": ["minimalist", "neon", "bauhaus", "collage", "duotone"]}"#;

pub fn image_for(i: usize, size: u32) -> RgbImage {
    let seed = i as u32 * 37 + 11;
    RgbImage::from_fn(size, size, |x, y| {
        Rgb([
            ((x * 7 + seed * 3) % 256) as u8,
            ((y * 5 + seed * 7) % 256) as u8,
            (((x + y) * 3 + seed * 13) % 256) as u8,
        ])
    })
}

/// A temporary workspace with an ingested corpus and LLM fixtures.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
}

impl Workspace {
    pub fn new() -> Self {
        Self::with_images(DESCRIPTIONS.len(), 32)
    }

    pub fn with_images(count: usize, size: u32) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let assets = root.join("assets");
        std::fs::create_dir_all(&assets).unwrap();
        let mut manifest = String::new();
        for i in 0..count {
            let name = format!("img{i:03}.png");
            image_for(i, size).save(assets.join(&name)).unwrap();
            let description = DESCRIPTIONS[i % DESCRIPTIONS.len()];
            manifest.push_str(&serde_json::json!({"id": format!("img{i:03}"), "uri": name, "description": description}).to_string());
            manifest.push('\n');
        }
        std::fs::write(assets.join("manifest.jsonl"), manifest).unwrap();

        let llm = root.join("llm");
        std::fs::create_dir_all(&llm).unwrap();
        std::fs::write(llm.join("concretize.txt"), CONCRETIZE_RESPONSE).unwrap();
        std::fs::write(llm.join("keywords.txt"), KEYWORDS_RESPONSE).unwrap();

        let config = ServiceConfig {
            corpus_path: root.join("store"),
            session_dir: Some(root.join("sessions")),
            host: "127.0.0.1".into(),
            port: 0,
            embedding: EmbeddingConfig::Stub {
                seed: 7,
                dimension: 64,
            },
            llm: LlmConfig::Fixture { dir: llm },
            debounce_ms: 0,
            ..ServiceConfig::default()
        };
        let embedder = build_embedder(&config.embedding);
        let store = CorpusStore::open_or_create(&config.corpus_path, 64).unwrap();
        store
            .ingest_manifest(assets.join("manifest.jsonl"), Some(&embedder))
            .unwrap();
        Self { dir, config }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn session_log(&self, session: &str) -> PathBuf {
        self.root()
            .join("sessions")
            .join(format!("{session}.jsonl"))
    }
}

/// Owns the runtime the server runs on so tests can stay synchronous.
pub struct Live {
    pub runtime: tokio::runtime::Runtime,
    pub server: Option<RunningServer>,
    pub base: String,
}

impl Live {
    pub fn start(config: ServiceConfig) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        let server = runtime.block_on(start(config)).expect("server starts");
        let base = server.url();
        Self {
            runtime,
            server: Some(server),
            base,
        }
    }

    pub fn client(&self, session: &str) -> Client {
        Client::new(&self.base, session)
    }

    pub fn shutdown(&mut self) {
        if let Some(server) = self.server.take() {
            self.runtime.block_on(server.shutdown()).unwrap();
        }
    }
}

impl Drop for Live {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug)]
pub struct Reply {
    pub status: u16,
    pub session: Option<String>,
    pub body: Value,
}

impl Reply {
    pub fn ok(self) -> Value {
        assert!(
            (200..300).contains(&self.status),
            "status {}: {}",
            self.status,
            self.body
        );
        self.body
    }
}

#[derive(Clone)]
pub struct Client {
    agent: ureq::Agent,
    base: String,
    pub session: String,
}

fn encode(value: &str) -> String {
    let mut out = String::new();
    for b in value.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

pub fn query(pairs: &[(&str, &str)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={}", encode(v)))
        .collect::<Vec<_>>()
        .join("&")
}

impl Client {
    pub fn new(base: &str, session: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(20)))
            .build()
            .into();
        Self {
            agent,
            base: base.to_owned(),
            session: session.to_owned(),
        }
    }

    fn finish(mut response: ureq::http::Response<ureq::Body>) -> Reply {
        let status = response.status().as_u16();
        let session = response
            .headers()
            .get(SESSION_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let text = response.body_mut().read_to_string().unwrap_or_default();
        let body = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        Reply {
            status,
            session,
            body,
        }
    }

    pub fn get(&self, path: &str) -> Reply {
        let url = format!("{}{}", self.base, path);
        let mut req = self.agent.get(&url);
        if !self.session.is_empty() {
            req = req.header(SESSION_HEADER, &self.session);
        }
        Self::finish(req.call().expect("transport"))
    }

    pub fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let url = format!("{}{}", self.base, path);
        let mut response = self.agent.get(&url).call().expect("transport");
        let status = response.status().as_u16();
        (
            status,
            response.body_mut().read_to_vec().unwrap_or_default(),
        )
    }

    pub fn post(&self, path: &str, body: Value) -> Reply {
        let url = format!("{}{}", self.base, path);
        let mut req = self.agent.post(&url);
        if !self.session.is_empty() {
            req = req.header(SESSION_HEADER, &self.session);
        }
        Self::finish(req.send_json(&body).expect("transport"))
    }

    pub fn delete(&self, path: &str, body: Option<Value>) -> Reply {
        let url = format!("{}{}", self.base, path);
        let mut req = self.agent.delete(&url);
        if !self.session.is_empty() {
            req = req.header(SESSION_HEADER, &self.session);
        }
        let response = match body {
            Some(body) => req.force_send_body().send_json(&body),
            None => req.call(),
        };
        Self::finish(response.expect("transport"))
    }

    pub fn search(&self, q: &str) -> Value {
        self.get(&format!("/search?{}", query(&[("q", q)]))).ok()
    }

    pub fn similar(&self, image_id: &str) -> Value {
        self.get(&format!("/similar?{}", query(&[("image_id", image_id)])))
            .ok()
    }

    pub fn events(&self) -> Vec<Value> {
        match self.get("/session/events") {
            r if r.status == 404 => Vec::new(),
            r => r.ok().as_array().cloned().unwrap_or_default(),
        }
    }

    pub fn report(&self) -> Value {
        self.get("/session/report").ok()
    }
}

pub fn ids(page: &Value) -> Vec<String> {
    page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["image_id"].as_str().unwrap().to_owned())
        .collect()
}

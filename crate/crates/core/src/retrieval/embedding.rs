//! Embedding vectors and the provider interface that produces them.
//!
//! Two providers ship with the crate: [`StubEmbedder`], a deterministic
//! hash-based embedder used offline and in tests, and [`HttpEmbedder`],
//! which speaks the `{kind, payload} -> {vector}` protocol to a remote
//! service.

use std::time::Duration;

use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RetrievalError;
use crate::remote::{self, RemoteError};

/// Default dimension for the stub provider.
pub const DEFAULT_DIMENSION: usize = 64;

/// Vectors whose norm is already this close to 1.0 are left untouched by
/// [`EmbeddingVector::normalized`], which makes normalization idempotent.
const UNIT_TOLERANCE: f64 = 1e-6;

/// Fixed-dimension, unit-norm float vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Builds a unit vector from raw values. Returns `None` for an empty or
    /// all-zero input, or one containing non-finite values.
    pub fn normalized(values: Vec<f32>) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return None;
        }
        if (norm - 1.0).abs() <= UNIT_TOLERANCE {
            return Some(Self(values));
        }
        Some(Self(
            values
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        ))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Cosine similarity of two unit vectors, accumulated in f64.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum()
    }
}

fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|v| f64::from(*v) * f64::from(*v))
        .sum::<f64>()
        .sqrt()
}

/// What is being embedded.
#[derive(Debug, Clone, Copy)]
pub enum EmbedPayload<'a> {
    Text(&'a str),
    Image(&'a RgbImage),
}

impl EmbedPayload<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            EmbedPayload::Text(_) => "text",
            EmbedPayload::Image(_) => "image",
        }
    }
}

/// A source of embeddings. Implementations must return vectors of
/// [`EmbeddingProvider::dimension`] entries; [`Embedder`] checks this.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f32>, RetrievalError>;

    fn dimension(&self) -> usize;
}

/// Deterministic embedder: a seeded SHA-256 of the input bytes, expanded in
/// counter mode to `dimension` floats in [-1, 1], then normalized.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    seed: u64,
    dimension: usize,
}

impl StubEmbedder {
    pub fn new(seed: u64, dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { seed, dimension }
    }

    fn expand(&self, bytes: &[u8]) -> Vec<f32> {
        let mut root = Sha256::new();
        root.update(self.seed.to_le_bytes());
        root.update(bytes);
        let root = root.finalize();

        let mut values = Vec::with_capacity(self.dimension);
        let mut block: u64 = 0;
        while values.len() < self.dimension {
            let mut hasher = Sha256::new();
            hasher.update(root);
            hasher.update(block.to_le_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if values.len() == self.dimension {
                    break;
                }
                let word = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                values.push((f64::from(word) / f64::from(u32::MAX) * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        values
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(0, DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f32>, RetrievalError> {
        Ok(match payload {
            EmbedPayload::Text(text) => self.expand(text.as_bytes()),
            EmbedPayload::Image(img) => {
                let mut bytes = Vec::with_capacity(8 + img.as_raw().len());
                bytes.extend_from_slice(&img.width().to_le_bytes());
                bytes.extend_from_slice(&img.height().to_le_bytes());
                bytes.extend_from_slice(img.as_raw());
                self.expand(&bytes)
            }
        })
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    kind: &'a str,
    payload: String,
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    vector: Vec<f32>,
}

/// Remote embedding service. Text payloads are sent verbatim, images as
/// base64 PNG.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    timeout: Duration,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            dimension,
            timeout,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Vec<f32>, RetrievalError> {
        let encoded = match payload {
            EmbedPayload::Text(text) => text.to_owned(),
            EmbedPayload::Image(img) => {
                let png = crate::pixels::encode_png(img)
                    .map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
                base64::engine::general_purpose::STANDARD.encode(png)
            }
        };
        let body = EmbedRequestBody {
            kind: payload.kind(),
            payload: encoded,
        };
        let response: EmbedResponseBody = remote::post_json(&self.endpoint, &body, self.timeout)
            .map_err(|e: RemoteError| RetrievalError::ProviderUnavailable(e.to_string()))?;
        Ok(response.vector)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Wraps a provider and enforces the unit-norm and dimension contracts.
#[derive(Clone)]
pub struct Embedder {
    provider: std::sync::Arc<dyn EmbeddingProvider>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("dimension", &self.provider.dimension())
            .finish()
    }
}

impl Embedder {
    pub fn new(provider: impl EmbeddingProvider + 'static) -> Self {
        Self {
            provider: std::sync::Arc::new(provider),
        }
    }

    pub fn from_arc(provider: std::sync::Arc<dyn EmbeddingProvider>) -> Self {
        Self { provider }
    }

    pub fn dimension(&self) -> usize {
        self.provider.dimension()
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.embed(EmbedPayload::Text(text))
    }

    pub fn embed_image(&self, image: &RgbImage) -> Result<EmbeddingVector, RetrievalError> {
        self.embed(EmbedPayload::Image(image))
    }

    fn embed(&self, payload: EmbedPayload<'_>) -> Result<EmbeddingVector, RetrievalError> {
        let raw = self.provider.embed(payload)?;
        let expected = self.provider.dimension();
        if raw.len() != expected {
            return Err(RetrievalError::DimensionMismatch {
                expected,
                actual: raw.len(),
            });
        }
        EmbeddingVector::normalized(raw).ok_or_else(|| {
            RetrievalError::ProviderUnavailable("provider returned a degenerate vector".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_deterministic() {
        let embedder = Embedder::new(StubEmbedder::default());
        let a = embedder.embed_text("hiking poster design").unwrap();
        let b = embedder.embed_text("hiking poster design").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), DEFAULT_DIMENSION);
    }

    #[test]
    fn stub_empty_string_is_unit_norm() {
        let embedder = Embedder::new(StubEmbedder::default());
        let v = embedder.embed_text("").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn seed_changes_output() {
        let a = Embedder::new(StubEmbedder::new(1, 16))
            .embed_text("x")
            .unwrap();
        let b = Embedder::new(StubEmbedder::new(2, 16))
            .embed_text("x")
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn image_embedding_depends_on_pixels() {
        let embedder = Embedder::new(StubEmbedder::default());
        let a = RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 4]));
        assert_ne!(
            embedder.embed_image(&a).unwrap(),
            embedder.embed_image(&b).unwrap()
        );
    }

    struct WrongDim;
    impl EmbeddingProvider for WrongDim {
        fn embed(&self, _: EmbedPayload<'_>) -> Result<Vec<f32>, RetrievalError> {
            Ok(vec![1.0; 3])
        }
        fn dimension(&self) -> usize {
            4
        }
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let err = Embedder::new(WrongDim).embed_text("a").unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::DimensionMismatch {
                expected: 4,
                actual: 3
            }
        ));
    }

    #[test]
    fn degenerate_vectors_rejected() {
        assert!(EmbeddingVector::normalized(vec![]).is_none());
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_none());
        assert!(EmbeddingVector::normalized(vec![f32::NAN, 1.0]).is_none());
    }

    #[test]
    fn remote_timeout_maps_to_provider_unavailable() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        // Accept but never answer.
        let _hold = std::thread::spawn(move || {
            let conn = listener.accept();
            std::thread::sleep(Duration::from_secs(2));
            drop(conn);
        });
        let embedder = Embedder::new(HttpEmbedder::new(
            format!("http://{addr}/embed"),
            8,
            Duration::from_millis(150),
        ));
        let started = std::time::Instant::now();
        let err = embedder.embed_text("a").unwrap_err();
        assert!(matches!(err, RetrievalError::ProviderUnavailable(_)));
        assert!(started.elapsed() < Duration::from_secs(2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_is_idempotent(values in proptest::collection::vec(-10.0f32..10.0, 1..128)) {
                prop_assume!(values.iter().any(|v| v.abs() > 1e-3));
                let once = EmbeddingVector::normalized(values).unwrap();
                prop_assert!((once.norm() - 1.0).abs() <= 1e-6);
                let twice = EmbeddingVector::normalized(once.as_slice().to_vec()).unwrap();
                for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                    prop_assert!((f64::from(*a) - f64::from(*b)).abs() <= 1e-9);
                }
            }
        }
    }
}

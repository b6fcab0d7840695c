//! Embedding provider client plus the vector arithmetic used by the
//! relevance cascade and the semantic-similarity metric.
//!
//! Providers sit behind the [`Embedder`] trait so tests and offline runs can
//! swap in mocks; the HTTP implementation speaks the common
//! `{model, input:[...]} -> {data:[{index, embedding}]}` wire contract and
//! caches every vector on disk keyed by `(model_id, exact text bytes)`.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{content_key, CacheError, DiskCache};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("empty text for embedding")]
    EmptyText,
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("provider request failed after {attempts} attempts: {message}")]
    Provider { attempts: usize, message: String },
    #[error("offline run with cold cache; missing keys: {}", .missing.join(", "))]
    Offline { missing: Vec<String> },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("no embedding provider configured")]
    NotConfigured,
}

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine of the angle between two vectors, clamped to `[-1, 1]` against
/// floating-point drift.
pub fn cosine_similarity<F: Float>(a: &[F], b: &[F]) -> Result<F, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch(a.len(), b.len()));
    }
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == F::zero() || nb == F::zero() {
        return Err(EmbeddingError::ZeroNorm);
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    Ok(cos.min(F::one()).max(-F::one()))
}

/// Convenience wrapper over [`cosine_similarity`] for `EmbeddingVector`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine_similarity(&a.values, &b.values)
}

/// Anything that can turn texts into vectors.
pub trait Embedder: Send + Sync {
    /// One vector per input text, order-preserving, all sharing one dim.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub endpoint_url: String,
    pub model_id: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub cache_path: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Name of the env var holding the API key, if the provider needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Cache-only mode: any cache miss fails fast, no network is touched.
    #[serde(default)]
    pub offline: bool,
}

fn default_batch_size() -> usize {
    16
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> usize {
    2
}
fn default_in_flight() -> usize {
    4
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireItem>,
}

#[derive(Deserialize)]
struct WireItem {
    index: usize,
    embedding: Vec<f64>,
}

/// HTTP embedding client with batching, retries, bounded in-flight requests,
/// and a persistent vector cache.
pub struct HttpEmbedder {
    config: EmbeddingProviderConfig,
    cache: DiskCache<Vec<f64>>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbeddingError> {
        let cache = match &config.cache_path {
            Some(path) => DiskCache::open(path)?,
            None => DiskCache::ephemeral(),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| EmbeddingError::Provider {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { config, cache, client })
    }

    fn cache_key(&self, text: &str) -> String {
        content_key(&[&self.config.model_id, text])
    }

    fn request_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let attempts = self.config.max_retries + 1;
        let mut last_err = String::new();
        for _ in 0..attempts {
            match self.request_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(RequestFailure::Retryable(message)) => last_err = message,
                Err(RequestFailure::Fatal(err)) => return Err(err),
            }
        }
        Err(EmbeddingError::Provider {
            attempts,
            message: last_err,
        })
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RequestFailure> {
        let mut request = self.client.post(&self.config.endpoint_url).json(&WireRequest {
            model: &self.config.model_id,
            input: texts,
        });
        if let Some(env_name) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                request = request.bearer_auth(key);
            }
        }
        let response = request
            .send()
            .map_err(|e| RequestFailure::Retryable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(RequestFailure::Retryable(format!(
                "http status {}",
                response.status()
            )));
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| RequestFailure::Retryable(format!("bad response body: {e}")))?;
        if body.data.len() != texts.len() {
            return Err(RequestFailure::Fatal(EmbeddingError::CountMismatch {
                expected: texts.len(),
                got: body.data.len(),
            }));
        }
        let mut vectors = vec![Vec::new(); texts.len()];
        for item in body.data {
            if item.index >= texts.len() {
                return Err(RequestFailure::Fatal(EmbeddingError::CountMismatch {
                    expected: texts.len(),
                    got: item.index + 1,
                }));
            }
            vectors[item.index] = item.embedding;
        }
        Ok(vectors)
    }
}

enum RequestFailure {
    Retryable(String),
    Fatal(EmbeddingError),
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let keys: Vec<String> = texts.iter().map(|t| self.cache_key(t)).collect();

        // Dedup uncached texts so identical inputs cost one request slot.
        let mut missing: Vec<(String, String)> = Vec::new();
        for (text, key) in texts.iter().zip(&keys) {
            if !self.cache.contains(key) && !missing.iter().any(|(k, _)| k == key) {
                missing.push((key.clone(), text.clone()));
            }
        }

        if self.config.offline && !missing.is_empty() {
            return Err(EmbeddingError::Offline {
                missing: missing.into_iter().map(|(k, _)| k).collect(),
            });
        }

        if !missing.is_empty() {
            let batch_size = self.config.batch_size.max(1);
            let batches: Vec<Vec<(String, String)>> = missing
                .chunks(batch_size)
                .map(|c| c.to_vec())
                .collect();
            type BatchQueue = Mutex<VecDeque<Vec<(String, String)>>>;
            let queue: Arc<BatchQueue> = Arc::new(Mutex::new(batches.into_iter().collect()));
            let workers = self.config.max_in_flight.max(1);
            let first_error: Mutex<Option<EmbeddingError>> = Mutex::new(None);

            std::thread::scope(|scope| {
                for _ in 0..workers {
                    let queue = Arc::clone(&queue);
                    let first_error = &first_error;
                    scope.spawn(move || loop {
                        let batch = match queue.lock().unwrap().pop_front() {
                            Some(batch) => batch,
                            None => break,
                        };
                        let texts: Vec<String> =
                            batch.iter().map(|(_, t)| t.clone()).collect();
                        match self.request_batch(&texts) {
                            Ok(vectors) => {
                                for ((key, _), values) in batch.iter().zip(vectors) {
                                    if let Err(e) = self.cache.put(key, values) {
                                        first_error
                                            .lock()
                                            .unwrap()
                                            .get_or_insert(EmbeddingError::Cache(e));
                                        return;
                                    }
                                }
                            }
                            Err(e) => {
                                first_error.lock().unwrap().get_or_insert(e);
                                return;
                            }
                        }
                    });
                }
            });

            if let Some(err) = first_error.into_inner().unwrap() {
                return Err(err);
            }
        }

        let mut out = Vec::with_capacity(texts.len());
        for key in &keys {
            let values = self.cache.get(key).ok_or(EmbeddingError::Provider {
                attempts: 0,
                message: "vector missing after fetch".into(),
            })?;
            out.push(EmbeddingVector::new(values));
        }
        let dim = out.first().map(EmbeddingVector::dim).unwrap_or(0);
        for v in &out {
            if v.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch(dim, v.dim()));
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::Provider {
                    attempts: 0,
                    message: "non-finite embedding value".into(),
                });
            }
        }
        Ok(out)
    }
}

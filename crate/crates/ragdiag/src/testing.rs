//! Offline test doubles: a minimal local HTTP server and a deterministic
//! mock embedder. Used by the crate's own tests and handy for callers who
//! want to exercise pipelines without a live provider.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use sha2::{Digest, Sha256};

use crate::embeddings::{Embedder, EmbeddingError, EmbeddingVector};

/// Handler invoked per request with the raw body; returns (status, body).
pub type Handler = dyn Fn(&str) -> (u16, String) + Send + Sync + 'static;

/// A tiny blocking HTTP/1.1 server for provider mocks. Tracks total request
/// count and the high-water mark of concurrent in-flight requests.
pub struct MockServer {
    addr: String,
    requests: Arc<AtomicUsize>,
    in_flight_peak: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str) -> (u16, String) + Send + Sync + 'static,
    {
        Self::start_with_delay(handler, std::time::Duration::ZERO)
    }

    /// Like [`MockServer::start`] but holds each request open for `delay`,
    /// which makes concurrency observable.
    pub fn start_with_delay<F>(handler: F, delay: std::time::Duration) -> Self
    where
        F: Fn(&str) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let in_flight_peak = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);

        let requests_c = Arc::clone(&requests);
        let peak_c = Arc::clone(&in_flight_peak);
        let shutdown_c = Arc::clone(&shutdown);
        let in_flight = Arc::new(AtomicUsize::new(0));

        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown_c.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let requests = Arc::clone(&requests_c);
                let peak = Arc::clone(&peak_c);
                let in_flight = Arc::clone(&in_flight);
                std::thread::spawn(move || {
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    requests.fetch_add(1, Ordering::SeqCst);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    let _ = serve_one(stream, &*handler);
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });

        Self {
            addr,
            requests,
            in_flight_peak,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.in_flight_peak.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop with a throwaway connection.
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_one(mut stream: TcpStream, handler: &Handler) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(rest) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .map(str::to_string)
        {
            content_length = rest.parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    let (status, reply) = handler(&body);
    let reason = if status < 400 { "OK" } else { "ERROR" };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}

/// Responds to embedding-wire requests with deterministic unit vectors
/// derived from each input text's hash, unless an explicit vector is pinned.
pub fn embedding_handler(pinned: HashMap<String, Vec<f64>>, dim: usize) -> impl Fn(&str) -> (u16, String) + Send + Sync {
    move |body: &str| {
        let parsed: serde_json::Value = match serde_json::from_str(body) {
            Ok(v) => v,
            Err(_) => return (400, r#"{"error":"bad json"}"#.to_string()),
        };
        let inputs: Vec<String> = parsed["input"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|v| v.as_str().unwrap_or_default().to_string())
                    .collect()
            })
            .unwrap_or_default();
        let data: Vec<serde_json::Value> = inputs
            .iter()
            .enumerate()
            .map(|(index, text)| {
                let embedding = pinned
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| hash_vector(text, dim));
                serde_json::json!({"index": index, "embedding": embedding})
            })
            .collect();
        (200, serde_json::json!({ "data": data }).to_string())
    }
}

/// Deterministic pseudo-embedding: unit vector seeded by the text hash.
pub fn hash_vector(text: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut values: Vec<f64> = (0..dim)
        .map(|i| {
            let byte = digest[i % digest.len()];
            let rotated = byte.wrapping_add((i / digest.len()) as u8 * 37);
            (rotated as f64 / 255.0) * 2.0 - 1.0
        })
        .collect();
    let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    } else {
        values[0] = 1.0;
    }
    values
}

/// In-process embedder: pinned vectors for known texts, hash vectors
/// otherwise. Pure and deterministic.
#[derive(Default)]
pub struct MockEmbedder {
    pub pinned: HashMap<String, Vec<f64>>,
    pub dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            pinned: HashMap::new(),
            dim,
        }
    }

    pub fn pin(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.pinned.insert(text.to_string(), vector);
        self
    }
}

impl Embedder for MockEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(texts
            .iter()
            .map(|t| {
                EmbeddingVector::new(
                    self.pinned
                        .get(t)
                        .cloned()
                        .unwrap_or_else(|| hash_vector(t, self.dim)),
                )
            })
            .collect())
    }
}

/// An embedder that always fails; lets tests prove stages 1-2 of the
/// relevance cascade never touch the provider.
pub struct FailingEmbedder;

impl Embedder for FailingEmbedder {
    fn embed_batch(&self, _texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Err(EmbeddingError::Provider {
            attempts: 1,
            message: "embedder must not be called".into(),
        })
    }
}

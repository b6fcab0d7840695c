//! Desk-scale hybrid retrieval: sliding-window chunking, BM25 lexical
//! ranking, exact brute-force dense ranking, and alpha-weighted reciprocal
//! rank fusion. No approximate index exists here; the dense scan is its own
//! oracle.

use std::collections::HashMap;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RetrievedContext;
use crate::embeddings::{cosine, Embedder, EmbeddingError};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("alpha > 0 requires an embedding provider")]
    NoEmbedder,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    CorpusFormat { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1024,
            overlap: 100,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(HarnessError::InvalidConfig(format!(
                "need 0 <= overlap < chunk_size, got overlap={} chunk_size={}",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Dense weight: 0 is pure lexical, 1 is pure dense.
    pub alpha: f64,
    pub rrf_k: usize,
    pub top_k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            rrf_k: 60,
            top_k: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.alpha) || self.rrf_k < 1 || self.top_k < 1 {
            return Err(HarnessError::InvalidConfig(format!(
                "need 0 <= alpha <= 1, rrf_k >= 1, top_k >= 1; got alpha={} rrf_k={} top_k={}",
                self.alpha, self.rrf_k, self.top_k
            )));
        }
        Ok(())
    }
}

/// BM25 parameters, standard defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_doc_id: String,
    pub text: String,
}

/// Immutable chunked corpus with the lexical statistics BM25 needs.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub chunks: Vec<Chunk>,
    term_frequencies: Vec<HashMap<String, usize>>,
    document_frequencies: HashMap<String, usize>,
    chunk_lengths: Vec<usize>,
    average_chunk_length: f64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

fn index_chunks(chunks: Vec<Chunk>) -> Corpus {
    let mut term_frequencies = Vec::with_capacity(chunks.len());
    let mut document_frequencies: HashMap<String, usize> = HashMap::new();
    let mut chunk_lengths = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let tokens: Vec<String> = tokenize(&chunk.text)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect();
        chunk_lengths.push(tokens.len());
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for term in tf.keys() {
            *document_frequencies.entry(term.clone()).or_default() += 1;
        }
        term_frequencies.push(tf);
    }
    let average_chunk_length = if chunk_lengths.is_empty() {
        0.0
    } else {
        chunk_lengths.iter().sum::<usize>() as f64 / chunk_lengths.len() as f64
    };
    Corpus {
        chunks,
        term_frequencies,
        document_frequencies,
        chunk_lengths,
        average_chunk_length,
    }
}

/// Sliding-window token chunks: consecutive chunks share exactly `overlap`
/// tokens; the final chunk may be shorter. Empty documents produce a warning
/// instead of a chunk.
pub fn chunk_documents(
    docs: &[(String, String)],
    cfg: &ChunkingConfig,
) -> Result<(Corpus, Vec<String>), HarnessError> {
    cfg.validate()?;
    let stride = cfg.chunk_size - cfg.overlap;
    let mut chunks = Vec::new();
    let mut warnings = Vec::new();
    for (doc_id, text) in docs {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            warnings.push(format!("document {doc_id} is empty; skipped"));
            continue;
        }
        let mut start = 0usize;
        let mut index = 0usize;
        loop {
            let end = (start + cfg.chunk_size).min(tokens.len());
            chunks.push(Chunk {
                chunk_id: format!("{doc_id}#{index}"),
                source_doc_id: doc_id.clone(),
                text: tokens[start..end].join(" "),
            });
            index += 1;
            if end == tokens.len() {
                break;
            }
            start += stride;
        }
    }
    Ok((index_chunks(chunks), warnings))
}

/// BM25 scoring for one chunk given the query term set.
fn bm25_chunk_score<F: Float>(
    query_terms: &[String],
    corpus: &Corpus,
    chunk_idx: usize,
    params: &Bm25Params,
) -> F {
    let n = corpus.chunks.len() as f64;
    let tf_map = &corpus.term_frequencies[chunk_idx];
    let len = corpus.chunk_lengths[chunk_idx] as f64;
    let avg = corpus.average_chunk_length.max(f64::MIN_POSITIVE);
    let mut score = 0.0f64;
    for term in query_terms {
        let Some(&tf) = tf_map.get(term) else { continue };
        let df = *corpus.document_frequencies.get(term).unwrap_or(&0) as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        let tf = tf as f64;
        let denom = tf + params.k1 * (1.0 - params.b + params.b * len / avg);
        score += idf * tf * (params.k1 + 1.0) / denom;
    }
    F::from(score).unwrap()
}

/// BM25 ranking, descending score, stable tie-break by chunk_id. Chunks with
/// zero score are omitted.
pub fn bm25_rank(query: &str, corpus: &Corpus, top_n: usize) -> Vec<(String, f64)> {
    bm25_rank_with(query, corpus, top_n, &Bm25Params::default())
}

pub fn bm25_rank_with(
    query: &str,
    corpus: &Corpus,
    top_n: usize,
    params: &Bm25Params,
) -> Vec<(String, f64)> {
    let query_terms: Vec<String> = {
        let mut seen = std::collections::BTreeSet::new();
        tokenize(query)
            .into_iter()
            .map(|t| t.to_lowercase())
            .filter(|t| seen.insert(t.clone()))
            .collect()
    };
    let mut scored: Vec<(String, f64)> = (0..corpus.chunks.len())
        .map(|i| {
            (
                corpus.chunks[i].chunk_id.clone(),
                bm25_chunk_score::<f64>(&query_terms, corpus, i, params),
            )
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_n);
    scored
}

/// Exact brute-force cosine ranking of the query against every chunk.
pub fn dense_rank(
    query: &str,
    corpus: &Corpus,
    embedder: &dyn Embedder,
    top_n: usize,
) -> Result<Vec<(String, f64)>, HarnessError> {
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts = vec![query.to_string()];
    texts.extend(corpus.chunks.iter().map(|c| c.text.clone()));
    let vectors = embedder.embed_batch(&texts)?;
    let query_vec = &vectors[0];
    let mut scored: Vec<(String, f64)> = corpus
        .chunks
        .iter()
        .zip(&vectors[1..])
        .map(|(chunk, v)| Ok((chunk.chunk_id.clone(), cosine(query_vec, v)?)))
        .collect::<Result<_, EmbeddingError>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored)
}

/// Alpha-weighted RRF score of one document given its 1-based ranks in each
/// list (empty slice when absent).
pub fn rrf_score<F: Float>(sparse_ranks: &[usize], dense_ranks: &[usize], alpha: F, rrf_k: usize) -> F {
    let sum = |ranks: &[usize]| {
        ranks.iter().fold(F::zero(), |acc, &r| {
            acc + F::one() / F::from(rrf_k + r).unwrap()
        })
    };
    (F::one() - alpha) * sum(sparse_ranks) + alpha * sum(dense_ranks)
}

/// Fuses the two ranked lists: convex combination of the per-list RRF sums,
/// descending fused score, ties broken by dense rank then chunk_id.
pub fn rrf_fuse(
    sparse: &[(String, f64)],
    dense: &[(String, f64)],
    cfg: &FusionConfig,
) -> Vec<(String, f64)> {
    let mut dense_rank_of: HashMap<&str, usize> = HashMap::new();
    for (i, (id, _)) in dense.iter().enumerate() {
        dense_rank_of.entry(id.as_str()).or_insert(i + 1);
    }
    let mut sparse_rank_of: HashMap<&str, usize> = HashMap::new();
    for (i, (id, _)) in sparse.iter().enumerate() {
        sparse_rank_of.entry(id.as_str()).or_insert(i + 1);
    }
    let mut ids: Vec<&str> = Vec::new();
    for (id, _) in sparse.iter().chain(dense.iter()) {
        if !ids.contains(&id.as_str()) {
            ids.push(id.as_str());
        }
    }
    let mut fused: Vec<(String, f64)> = ids
        .into_iter()
        .map(|id| {
            let s = sparse_rank_of.get(id).map(|&r| vec![r]).unwrap_or_default();
            let d = dense_rank_of.get(id).map(|&r| vec![r]).unwrap_or_default();
            (id.to_string(), rrf_score(&s, &d, cfg.alpha, cfg.rrf_k))
        })
        .collect();
    fused.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| {
                let da = dense_rank_of.get(a.0.as_str()).copied().unwrap_or(usize::MAX);
                let db = dense_rank_of.get(b.0.as_str()).copied().unwrap_or(usize::MAX);
                da.cmp(&db)
            })
            .then_with(|| a.0.cmp(&b.0))
    });
    fused.truncate(cfg.top_k);
    fused
}

/// Runs the hybrid pipeline for one query and returns contexts ready to drop
/// into an eval record.
pub fn retrieve(
    query: &str,
    corpus: &Corpus,
    cfg: &FusionConfig,
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<RetrievedContext>, HarnessError> {
    cfg.validate()?;
    let sparse = bm25_rank(query, corpus, corpus.len());
    let dense = if cfg.alpha > 0.0 {
        let embedder = embedder.ok_or(HarnessError::NoEmbedder)?;
        dense_rank(query, corpus, embedder, corpus.len())?
    } else {
        Vec::new()
    };
    let fused = rrf_fuse(&sparse, &dense, cfg);
    let text_of: HashMap<&str, &str> = corpus
        .chunks
        .iter()
        .map(|c| (c.chunk_id.as_str(), c.text.as_str()))
        .collect();
    Ok(fused
        .into_iter()
        .enumerate()
        .map(|(i, (id, score))| RetrievedContext {
            rank: i + 1,
            text: text_of.get(id.as_str()).unwrap_or(&"").to_string(),
            retriever_score: Some(score),
        })
        .collect())
}

/// Loads a corpus from a directory of plain-text files (doc_id = file name)
/// or a line-delimited JSON file of `{doc_id, text}`.
pub fn load_documents(path: &Path) -> Result<Vec<(String, String)>, HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut docs = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for file in entries {
            let doc_id = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = std::fs::read_to_string(&file).map_err(io_err)?;
            docs.push((doc_id, text));
        }
    } else {
        let content = std::fs::read_to_string(path).map_err(io_err)?;
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| HarnessError::CorpusFormat {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            let doc_id = value["doc_id"]
                .as_str()
                .ok_or_else(|| HarnessError::CorpusFormat {
                    line: idx + 1,
                    message: "missing doc_id".into(),
                })?
                .to_string();
            let text = value["text"]
                .as_str()
                .ok_or_else(|| HarnessError::CorpusFormat {
                    line: idx + 1,
                    message: "missing text".into(),
                })?
                .to_string();
            docs.push((doc_id, text));
        }
    }
    Ok(docs)
}

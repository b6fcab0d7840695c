//! Diagnostic evaluation toolkit for retrieval-augmented generation pipelines.
//!
//! The toolkit separates retriever assessment from generator assessment:
//! a cascading relevance function marks which retrieved contexts contain the
//! ground truth, ranking metrics and fine-grained diagnostics are computed
//! from the resulting hit matrix, generation quality is scored with surface,
//! structured, and semantic metrics, and the two sides are cross-referenced
//! into context-utilization quadrants that expose answers that are correct
//! without evidence support.

pub mod cache;
pub mod cue;
pub mod dataset;
pub mod embeddings;
pub mod generation_metrics;
pub mod harness;
pub mod judge;
pub mod normalize;
pub mod pipeline;
pub mod relevance;
pub mod report;
pub mod retrieval_metrics;
pub mod testing;
pub mod text;

/// Scalar type used by the concrete report structures. The numeric kernels
/// themselves are generic over `num_traits::Float`.
pub type Score = f64;

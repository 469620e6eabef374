//! Batch pipeline engine that builds domain-specific image dataset
//! manifests on demand.
//!
//! The engine runs four stages over external model services (chat,
//! embedding, image generation, OOD probability scoring — all behind a
//! small wire protocol, with deterministic in-process mocks for offline
//! runs):
//!
//! 1. [`concepts`] — discover a domain concept bank by iterative
//!    LLM-guided generation, expansion, and cross-model validation.
//! 2. [`acquisition`] — gather candidate images per concept: embedding
//!    retrieval from a real-image index plus caption-driven synthesis.
//! 3. [`curation`] — deduplicate via similarity-graph components, filter
//!    leaks against protected sets, score three OOD metrics, peel Pareto
//!    fronts, and stop pruning at the knee (or prune to an exact size).
//! 4. [`pipeline`] — orchestrate all of it with atomic checkpoints and
//!    resumability, emitting a final manifest plus accounting report.
//!
//! [`index`] provides the shared substrate: an immutable L2-normalized
//! vector store with exact cosine top-k search, thresholded k-NN graphs,
//! and connected components.

pub mod acquisition;
pub mod concepts;
pub mod curation;
pub mod gateway;
pub mod index;
pub mod pipeline;

mod par;
pub mod util;

/// Engine version recorded in manifests and checkpoints.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

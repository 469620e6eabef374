//! Pool curation: similarity-graph deduplication, leak filtering
//! against protected sets, the three-metric OOD assessment, Pareto
//! front peeling with kneedle-based stopping, and prune-to-size.

mod dedup;
mod kneedle;
mod leak;
mod ood;
mod pareto;
mod prune;
mod report;

pub use dedup::{dedup, DedupOutcome};
pub use kneedle::kneedle;
pub use leak::leak_filter;
pub use ood::{ood_score, ood_triple};
pub use pareto::{pareto_dominates, peel_fronts, ParetoAssignment};
pub use prune::{prune_to_size, select_halt, HaltDecision};
pub use report::{CurationReport, StageCounts};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("records missing from embedding store: {0:?}")]
    MissingEmbeddings(Vec<String>),
    #[error("invalid probability row for image '{image_id}': {message}")]
    InvalidProbabilities { image_id: String, message: String },
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("target size {target} exceeds record count {available}")]
    TargetTooLarge { target: usize, available: usize },
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
}

/// Duplicate-removal settings: `lambda_dup` is the cosine threshold
/// above which two copy-detection embeddings are considered duplicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupConfig {
    pub lambda_dup: f64,
    pub k: usize,
    pub rng_seed: i64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            lambda_dup: 0.6,
            k: 64,
            rng_seed: 0,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if !(self.lambda_dup > 0.0 && self.lambda_dup < 1.0) {
            return Err(CurationError::Domain(format!(
                "lambda_dup {} outside (0,1)",
                self.lambda_dup
            )));
        }
        if self.k == 0 {
            return Err(CurationError::Domain("dedup k must be positive".into()));
        }
        Ok(())
    }
}

/// Leak-filter settings: records whose max similarity to any protected
/// vector strictly exceeds `threshold` are removed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeakFilterConfig {
    pub threshold: f64,
    pub k: usize,
}

impl Default for LeakFilterConfig {
    fn default() -> Self {
        LeakFilterConfig {
            threshold: 0.45,
            k: 32,
        }
    }
}

impl LeakFilterConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CurationError::Domain(format!(
                "leak threshold {} outside (0,1)",
                self.threshold
            )));
        }
        if self.k == 0 {
            return Err(CurationError::Domain("leak k must be positive".into()));
        }
        Ok(())
    }
}

/// The three curation metrics for one image. Higher means more likely
/// out of domain; images with no detected text have `ood_text_delta`
/// exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OODTriple {
    pub image_id: String,
    /// OOD score against the domain concept bank.
    pub ood_primary: f64,
    /// OOD score against the generalized concept bank.
    pub ood_general: f64,
    /// OOD(text-blurred variant) minus OOD(original); large positive
    /// values flag images whose in-domain appearance depends on
    /// rendered text.
    pub ood_text_delta: f64,
}

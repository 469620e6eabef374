//! Leak filtering: drop pool images that look like protected test-set
//! images in the copy-detection space.

use super::{dedup::records_missing_from, CurationError, LeakFilterConfig};
use crate::acquisition::ImageRecord;
use crate::index::{top_k, EmbeddingStore};
use crate::par;

/// Remove every record whose maximum similarity to any protected vector
/// strictly exceeds the threshold. An empty protected store is a no-op
/// with a warning.
pub fn leak_filter(
    records: &[ImageRecord],
    copy_store: &EmbeddingStore,
    protected_store: &EmbeddingStore,
    config: &LeakFilterConfig,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>), CurationError> {
    config.validate()?;
    if protected_store.is_empty() {
        log::warn!("protected store is empty; leak filter is a no-op");
        return Ok((records.to_vec(), Vec::new()));
    }
    let missing = records_missing_from(records, copy_store);
    if !missing.is_empty() {
        return Err(CurationError::MissingEmbeddings(missing));
    }

    let leaking: Vec<Result<bool, CurationError>> = par::map_slice(records, |record| {
        let vector = copy_store.vector(&record.id)?;
        let neighbors = top_k(protected_store, vector, config.k, None)?;
        let max_sim = neighbors
            .neighbors
            .first()
            .map(|n| n.similarity)
            .unwrap_or(f64::NEG_INFINITY);
        Ok(max_sim > config.threshold)
    });

    let mut kept = Vec::with_capacity(records.len());
    let mut removed = Vec::new();
    for (record, verdict) in records.iter().zip(leaking) {
        if verdict? {
            removed.push(record.clone());
        } else {
            kept.push(record.clone());
        }
    }
    Ok((kept, removed))
}

//! Near-duplicate removal through connected components of the
//! copy-detection similarity graph.

use rand::prelude::*;

use super::{CurationError, DedupConfig};
use crate::acquisition::ImageRecord;
use crate::index::{connected_components, knn_graph, EmbeddingStore};
use crate::util::stable_seed;

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub kept: Vec<ImageRecord>,
    pub removed: Vec<ImageRecord>,
    /// Connected components over the record ids (singletons included).
    pub components: Vec<Vec<String>>,
}

impl DedupOutcome {
    /// Histogram of multi-member component sizes: size -> count.
    pub fn component_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut histogram = std::collections::BTreeMap::new();
        for component in &self.components {
            if component.len() > 1 {
                *histogram.entry(component.len()).or_insert(0) += 1;
            }
        }
        histogram
    }
}

pub(crate) fn records_missing_from(records: &[ImageRecord], store: &EmbeddingStore) -> Vec<String> {
    let mut missing: Vec<String> = records
        .iter()
        .filter(|r| store.index_of(&r.id).is_none())
        .map(|r| r.id.clone())
        .collect();
    missing.sort();
    missing
}

/// Remove near-duplicates: build the k-NN graph over the records'
/// copy-detection embeddings with threshold `lambda_dup`, find its
/// connected components, and keep exactly one member per multi-member
/// component — chosen uniformly by a generator seeded with
/// `(rng_seed, smallest id in the component)`. Singletons always stay.
pub fn dedup(
    records: &[ImageRecord],
    copy_store: &EmbeddingStore,
    config: &DedupConfig,
) -> Result<DedupOutcome, CurationError> {
    config.validate()?;
    let missing = records_missing_from(records, copy_store);
    if !missing.is_empty() {
        return Err(CurationError::MissingEmbeddings(missing));
    }
    if records.is_empty() {
        return Ok(DedupOutcome {
            kept: Vec::new(),
            removed: Vec::new(),
            components: Vec::new(),
        });
    }

    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let sub = copy_store.subset(&ids)?;
    let graph = knn_graph(&sub, config.k, config.lambda_dup)?;
    let components = connected_components(&graph);

    let mut kept_ids = std::collections::HashSet::with_capacity(records.len());
    for component in &components {
        if component.len() == 1 {
            kept_ids.insert(component[0].as_str());
            continue;
        }
        // Members arrive sorted by id; the smallest id seeds the draw.
        let seed = stable_seed(&["dedup", &config.rng_seed.to_string(), &component[0]]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let keep = rng.random_range(0..component.len());
        kept_ids.insert(component[keep].as_str());
    }

    let (kept, removed): (Vec<ImageRecord>, Vec<ImageRecord>) = records
        .iter()
        .cloned()
        .partition(|r| kept_ids.contains(r.id.as_str()));

    Ok(DedupOutcome {
        kept,
        removed,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::ImageSource;
    use crate::index::build_store;

    fn record(id: &str) -> ImageRecord {
        ImageRecord {
            id: id.to_string(),
            uri: format!("mock://img/{id}"),
            source: ImageSource::Real,
            concept_id: "c".into(),
            caption: None,
            retrieval_similarity: Some(0.5),
        }
    }

    /// Vectors with prescribed pairwise cosines via Cholesky.
    fn gram_vectors(gram: &[Vec<f64>]) -> Vec<Vec<f32>> {
        let n = gram.len();
        let mut l = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = gram[i][j];
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                l[i][j] = if i == j { sum.sqrt() } else { sum / l[j][j] };
            }
        }
        l.into_iter()
            .map(|row| row.into_iter().map(|x| x as f32).collect())
            .collect()
    }

    #[test]
    fn transitive_component_keeps_one() {
        // sims: ab 0.95, bc 0.7, ac 0.5 with threshold 0.6 gives one
        // component {a, b, c}: 1 kept, 2 removed.
        let gram = vec![
            vec![1.0, 0.95, 0.5],
            vec![0.95, 1.0, 0.7],
            vec![0.5, 0.7, 1.0],
        ];
        let store = build_store(
            vec!["a".into(), "b".into(), "c".into()],
            gram_vectors(&gram),
            "copy",
        )
        .unwrap();
        let records = vec![record("a"), record("b"), record("c")];
        let config = DedupConfig {
            lambda_dup: 0.6,
            k: 64,
            rng_seed: 7,
        };
        let outcome = dedup(&records, &store, &config).unwrap();
        assert_eq!(outcome.kept.len(), 1);
        assert_eq!(outcome.removed.len(), 2);
        assert_eq!(outcome.components.len(), 1);
        assert_eq!(outcome.component_histogram().get(&3), Some(&1));

        // Same seed, same choice.
        let again = dedup(&records, &store, &config).unwrap();
        assert_eq!(outcome.kept[0].id, again.kept[0].id);
    }

    #[test]
    fn all_pairs_below_threshold_keeps_everything() {
        let gram = vec![
            vec![1.0, 0.3, 0.1],
            vec![0.3, 1.0, 0.2],
            vec![0.1, 0.2, 1.0],
        ];
        let store = build_store(
            vec!["a".into(), "b".into(), "c".into()],
            gram_vectors(&gram),
            "copy",
        )
        .unwrap();
        let records = vec![record("a"), record("b"), record("c")];
        let outcome = dedup(&records, &store, &DedupConfig::default()).unwrap();
        assert_eq!(outcome.kept.len(), 3);
        assert!(outcome.removed.is_empty());
        assert!(outcome.component_histogram().is_empty());
    }

    #[test]
    fn missing_embeddings_name_the_records() {
        let store = build_store(vec!["a".into()], vec![vec![1.0, 0.0]], "copy").unwrap();
        let records = vec![record("a"), record("ghost"), record("wraith")];
        match dedup(&records, &store, &DedupConfig::default()).unwrap_err() {
            CurationError::MissingEmbeddings(ids) => {
                assert_eq!(ids, vec!["ghost".to_string(), "wraith".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

//! Immutable normalized vector store with exact cosine top-k search,
//! thresholded k-NN graph construction, and connected components.
//!
//! Rows are stored as 32-bit floats and L2-normalized at build time;
//! dot products accumulate in 64-bit. Search is exact (no approximation)
//! and every tie breaks by id ascending, so results are deterministic
//! across platforms and thread counts.

mod graph;
mod storage;

pub use graph::{connected_components, dense_adjacency, knn_graph, SimilarityGraph};
pub use storage::{load_store, save_store};

use std::collections::HashMap;

use thiserror::Error;

use crate::par;

/// Norm slack tolerated on stored rows (build guarantees much tighter).
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate id '{0}' in store build")]
    DuplicateId(String),
    #[error("zero-norm vector for id '{0}'")]
    ZeroNorm(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("store is empty")]
    EmptyStore,
    #[error("k must be positive")]
    ZeroK,
    #[error("id '{0}' not present in store")]
    UnknownId(String),
    #[error("store format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable table of L2-normalized embedding rows keyed by string id.
///
/// `model_tag` names the encoder that produced the vectors so stores
/// from different embedding spaces (retrieval vs copy-detection) cannot
/// be mixed up silently.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    model_tag: String,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Normalized row for `id`, or an error naming the id.
    pub fn vector(&self, id: &str) -> Result<&[f32], IndexError> {
        self.index_of(id)
            .map(|i| self.row(i))
            .ok_or_else(|| IndexError::UnknownId(id.to_string()))
    }

    /// New store restricted to `ids`, preserving the given order.
    /// Rows are already normalized, so this is a plain copy.
    pub fn subset(&self, ids: &[String]) -> Result<EmbeddingStore, IndexError> {
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            vectors.extend_from_slice(self.vector(id)?);
        }
        let by_id = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(EmbeddingStore {
            dim: self.dim,
            ids: ids.to_vec(),
            vectors,
            model_tag: self.model_tag.clone(),
            by_id,
        })
    }
}

/// Build a store from raw (unnormalized) rows. Rows are L2-normalized;
/// order is preserved; duplicate ids and zero-norm rows are rejected.
pub fn build_store(
    ids: Vec<String>,
    raw_vectors: Vec<Vec<f32>>,
    model_tag: &str,
) -> Result<EmbeddingStore, IndexError> {
    if ids.len() != raw_vectors.len() {
        return Err(IndexError::DimensionMismatch {
            expected: ids.len(),
            found: raw_vectors.len(),
        });
    }
    let dim = raw_vectors.first().map(|v| v.len()).unwrap_or(0);
    let mut by_id = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if by_id.insert(id.clone(), i).is_some() {
            return Err(IndexError::DuplicateId(id.clone()));
        }
    }
    let mut vectors = Vec::with_capacity(ids.len() * dim);
    for (id, row) in ids.iter().zip(&raw_vectors) {
        if row.len() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        let norm = l2_norm(row);
        if norm < f64::EPSILON {
            return Err(IndexError::ZeroNorm(id.clone()));
        }
        vectors.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
    }
    Ok(EmbeddingStore {
        dim,
        ids,
        vectors,
        model_tag: model_tag.to_string(),
        by_id,
    })
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Dot product with 64-bit accumulation.
pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum::<f64>()
}

/// Cosine similarity of two vectors of equal dimension.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu < f64::EPSILON {
        return Err(IndexError::ZeroNorm("left operand".into()));
    }
    if nv < f64::EPSILON {
        return Err(IndexError::ZeroNorm("right operand".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// One scored neighbor of a query.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

/// Neighbors of one query, sorted by similarity descending, ties broken
/// by id ascending. When self-exclusion was requested `query_id` names
/// the excluded row and never appears among the neighbors.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeighborList {
    pub query_id: Option<String>,
    pub neighbors: Vec<Neighbor>,
}

fn neighbor_order(a: &(f64, &str), b: &(f64, &str)) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1))
}

/// Exact top-k cosine search. Returns the `k` highest-similarity rows
/// (fewer if the store is smaller), excluding `exclude` when given.
pub fn top_k(
    store: &EmbeddingStore,
    query: &[f32],
    k: usize,
    exclude: Option<&str>,
) -> Result<NeighborList, IndexError> {
    if store.is_empty() {
        return Err(IndexError::EmptyStore);
    }
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if query.len() != store.dim {
        return Err(IndexError::DimensionMismatch {
            expected: store.dim,
            found: query.len(),
        });
    }
    let qnorm = l2_norm(query);
    if qnorm < f64::EPSILON {
        return Err(IndexError::ZeroNorm("query".into()));
    }

    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        let id = store.id(i);
        if exclude == Some(id) {
            continue;
        }
        // Rows are unit norm; dividing by the query norm yields cosine.
        let sim = (dot(store.row(i), query) / qnorm).clamp(-1.0, 1.0);
        scored.push((sim, id));
    }
    let take = k.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take, neighbor_order);
        scored.truncate(take);
    }
    scored.sort_unstable_by(neighbor_order);

    Ok(NeighborList {
        query_id: exclude.map(str::to_string),
        neighbors: scored
            .into_iter()
            .map(|(similarity, id)| Neighbor {
                id: id.to_string(),
                similarity,
            })
            .collect(),
    })
}

/// Top-k for a batch of queries; one result per query, in query order.
pub fn top_k_batch(
    store: &EmbeddingStore,
    queries: &[Vec<f32>],
    k: usize,
) -> Result<Vec<NeighborList>, IndexError> {
    let results = par::map_slice(queries, |q| top_k(store, q, k, None));
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_of(rows: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let ids = rows.iter().map(|(id, _)| id.to_string()).collect();
        let vecs = rows.iter().map(|(_, v)| v.clone()).collect();
        build_store(ids, vecs, "test").unwrap()
    }

    #[test]
    fn build_normalizes_rows() {
        let store = store_of(&[("a", vec![3.0, 4.0])]);
        let row = store.row(0);
        assert!((row[0] - 0.6).abs() < 1e-7);
        assert!((row[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn build_rejects_duplicate_ids() {
        let err = build_store(
            vec!["a".into(), "a".into()],
            vec![vec![1.0], vec![2.0]],
            "t",
        )
        .unwrap_err();
        assert!(matches!(err, IndexError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn build_rejects_zero_norm_naming_id() {
        let err = build_store(vec!["z".into()], vec![vec![0.0, 0.0]], "t").unwrap_err();
        assert!(matches!(err, IndexError::ZeroNorm(id) if id == "z"));
    }

    #[test]
    fn build_rejects_ragged_rows() {
        let err = build_store(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.0], vec![1.0]],
            "t",
        )
        .unwrap_err();
        assert!(matches!(err, IndexError::DimensionMismatch { .. }));
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_collinear_is_one() {
        let sim = cosine_similarity(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_value() {
        let sim = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((sim - 0.70710678).abs() < 1e-7);
    }

    #[test]
    fn cosine_zero_vector_is_domain_error() {
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn top_k_singleton() {
        let store = store_of(&[("r", vec![0.3, 0.4])]);
        let result = top_k(&store, &[0.3, 0.4], 5, None).unwrap();
        assert_eq!(result.neighbors.len(), 1);
        assert_eq!(result.neighbors[0].id, "r");
        assert!((result.neighbors[0].similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_k_saturates_to_store_size() {
        let store = store_of(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let result = top_k(&store, &[1.0, 1.0], 10, None).unwrap();
        assert_eq!(result.neighbors.len(), 2);
    }

    #[test]
    fn top_k_excludes_query_id() {
        let store = store_of(&[("a", vec![1.0, 0.0]), ("b", vec![0.9, 0.1])]);
        let result = top_k(&store, &[1.0, 0.0], 5, Some("a")).unwrap();
        assert_eq!(result.query_id.as_deref(), Some("a"));
        assert!(result.neighbors.iter().all(|n| n.id != "a"));
    }

    #[test]
    fn top_k_empty_store_errors() {
        let store = build_store(vec![], vec![], "t").unwrap();
        assert!(matches!(
            top_k(&store, &[1.0], 1, None),
            Err(IndexError::EmptyStore)
        ));
    }

    #[test]
    fn top_k_ties_break_by_id_ascending() {
        // Two identical rows: equal similarity, order must be by id.
        let store = store_of(&[("zz", vec![1.0, 0.0]), ("aa", vec![1.0, 0.0])]);
        let result = top_k(&store, &[1.0, 0.0], 2, None).unwrap();
        assert_eq!(result.neighbors[0].id, "aa");
        assert_eq!(result.neighbors[1].id, "zz");
    }

    #[test]
    fn subset_preserves_rows() {
        let store = store_of(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let sub = store.subset(&["b".to_string()]).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.vector("b").unwrap(), store.vector("b").unwrap());
        assert!(matches!(
            store.subset(&["missing".to_string()]),
            Err(IndexError::UnknownId(_))
        ));
    }

    #[test]
    fn random_store_norms_within_tolerance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1000;
        let dim = 128;
        let ids = (0..n).map(|i| format!("v{i:05}")).collect();
        let rows = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let store = build_store(ids, rows, "t").unwrap();
        for i in 0..store.len() {
            let norm = l2_norm(store.row(i));
            assert!((norm - 1.0).abs() < NORM_TOLERANCE);
        }
    }
}

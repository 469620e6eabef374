//! Thresholded k-NN similarity graph and connected components.

use super::{dot, EmbeddingStore, IndexError};
use crate::par;

/// Undirected similarity graph over store ids. Every edge's similarity
/// strictly exceeds `threshold`; an edge is kept if either endpoint
/// proposed it among its k nearest neighbors.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub ids: Vec<String>,
    /// Edges as (i, j, similarity) with i < j, sorted by (i, j).
    pub edges: Vec<(u32, u32, f64)>,
    pub threshold: f64,
    pub k: usize,
}

impl SimilarityGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Build the k-NN graph of a store: for each node, edges to its k
/// nearest neighbors with similarity strictly above `threshold`, then
/// symmetrized.
///
/// For n <= k+1 no truncation is possible, so the result equals the
/// dense thresholded adjacency. Beyond that a node with more than k
/// above-threshold neighbors contributes only its k nearest, which can
/// split a component that a dense adjacency would join.
pub fn knn_graph(
    store: &EmbeddingStore,
    k: usize,
    threshold: f64,
) -> Result<SimilarityGraph, IndexError> {
    if store.is_empty() {
        return Err(IndexError::EmptyStore);
    }
    if k == 0 {
        return Err(IndexError::ZeroK);
    }

    let n = store.len();
    let per_node: Vec<Vec<(u32, u32, f64)>> = par::map_range(n, |i| {
        let row = store.row(i);
        // Rows are unit norm, so the dot product is the cosine.
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dot(row, store.row(j)).clamp(-1.0, 1.0), j))
            .filter(|&(sim, _)| sim > threshold)
            .collect();
        scored.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| store.id(a.1).cmp(store.id(b.1)))
        });
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(sim, j)| {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                (a as u32, b as u32, sim)
            })
            .collect()
    });

    let mut edges: Vec<(u32, u32, f64)> = per_node.into_iter().flatten().collect();
    edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges.dedup_by_key(|e| (e.0, e.1));

    Ok(SimilarityGraph {
        ids: store.ids().to_vec(),
        edges,
        threshold,
        k,
    })
}

/// Connected components of the graph as id sets.
///
/// Returns a partition of all node ids: members sorted by id ascending
/// within each component, components sorted by their smallest member id.
pub fn connected_components(graph: &SimilarityGraph) -> Vec<Vec<String>> {
    let n = graph.ids.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();

    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    for &(a, b, _) in &graph.edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra.max(rb) as usize] = ra.min(rb);
        }
    }

    let mut groups: std::collections::HashMap<u32, Vec<&str>> = std::collections::HashMap::new();
    for i in 0..n as u32 {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(&graph.ids[i as usize]);
    }

    let mut components: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            members.into_iter().map(str::to_string).collect()
        })
        .collect();
    components.sort_by(|a, b| a[0].cmp(&b[0]));
    components
}

/// Dense thresholded adjacency over all pairs, same edge encoding as
/// [`knn_graph`]. Exact at any scale but quadratic; used as the oracle
/// for small-n checks and by tests.
pub fn dense_adjacency(store: &EmbeddingStore, threshold: f64) -> Result<SimilarityGraph, IndexError> {
    if store.is_empty() {
        return Err(IndexError::EmptyStore);
    }
    let n = store.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = dot(store.row(i), store.row(j)).clamp(-1.0, 1.0);
            if sim > threshold {
                edges.push((i as u32, j as u32, sim));
            }
        }
    }
    Ok(SimilarityGraph {
        ids: store.ids().to_vec(),
        edges,
        threshold,
        k: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_store;

    /// Unit vectors with a prescribed Gram (pairwise cosine) matrix,
    /// via a small Cholesky factorization.
    pub(crate) fn gram_vectors(gram: &[Vec<f64>]) -> Vec<Vec<f32>> {
        let n = gram.len();
        let mut l = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = gram[i][j];
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    l[i][j] = sum.sqrt();
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        l.into_iter()
            .map(|row| row.into_iter().map(|x| x as f32).collect())
            .collect()
    }

    fn three_node_store() -> crate::index::EmbeddingStore {
        // Pairwise sims: ab 0.95, bc 0.7, ac 0.5.
        let gram = vec![
            vec![1.0, 0.95, 0.5],
            vec![0.95, 1.0, 0.7],
            vec![0.5, 0.7, 1.0],
        ];
        let rows = gram_vectors(&gram);
        build_store(
            vec!["a".into(), "b".into(), "c".into()],
            rows,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn knn_graph_hand_case() {
        let store = three_node_store();
        let graph = knn_graph(&store, 2, 0.6).unwrap();
        let pairs: Vec<(u32, u32)> = graph.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
        assert!((graph.edges[0].2 - 0.95).abs() < 1e-6);
        assert!((graph.edges[1].2 - 0.7).abs() < 1e-6);
    }

    #[test]
    fn unreachable_threshold_gives_empty_graph() {
        let store = three_node_store();
        let graph = knn_graph(&store, 2, 1.0).unwrap();
        assert!(graph.edges.is_empty());
    }

    #[test]
    fn small_n_equals_dense_adjacency() {
        let store = three_node_store();
        let knn = knn_graph(&store, 64, 0.6).unwrap();
        let dense = dense_adjacency(&store, 0.6).unwrap();
        assert_eq!(knn.edges, dense.edges);
    }

    #[test]
    fn components_chain_and_isolate() {
        let graph = SimilarityGraph {
            ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            edges: vec![(0, 1, 0.9), (1, 2, 0.9)],
            threshold: 0.5,
            k: 2,
        };
        let components = connected_components(&graph);
        assert_eq!(components, vec![vec!["a", "b", "c"], vec!["d"]]);
    }

    #[test]
    fn components_no_edges_all_singletons() {
        let graph = SimilarityGraph {
            ids: (0..5).map(|i| format!("n{i}")).collect(),
            edges: vec![],
            threshold: 0.5,
            k: 1,
        };
        let components = connected_components(&graph);
        assert_eq!(components.len(), 5);
        assert!(components.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn components_match_transitive_closure_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(2..60usize);
            let ids: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_bool(0.05) {
                        edges.push((i as u32, j as u32, 0.9));
                    }
                }
            }
            let graph = SimilarityGraph {
                ids: ids.clone(),
                edges: edges.clone(),
                threshold: 0.5,
                k: n,
            };
            let components = connected_components(&graph);

            // Oracle: boolean reachability closure.
            let mut reach = vec![vec![false; n]; n];
            for i in 0..n {
                reach[i][i] = true;
            }
            for &(a, b, _) in &edges {
                reach[a as usize][b as usize] = true;
                reach[b as usize][a as usize] = true;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if reach[i][k] && reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
            let mut oracle: Vec<Vec<String>> = Vec::new();
            let mut seen = vec![false; n];
            for i in 0..n {
                if seen[i] {
                    continue;
                }
                let mut group = Vec::new();
                for j in 0..n {
                    if reach[i][j] {
                        seen[j] = true;
                        group.push(ids[j].clone());
                    }
                }
                group.sort();
                oracle.push(group);
            }
            oracle.sort_by(|a, b| a[0].cmp(&b[0]));
            assert_eq!(components, oracle);

            // Partition property: disjoint, union = node set.
            let total: usize = components.iter().map(|c| c.len()).sum();
            assert_eq!(total, n);
        }
    }
}

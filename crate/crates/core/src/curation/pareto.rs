//! Pareto dominance over the three OOD metrics and iterative
//! non-dominated sorting (front peeling).
//!
//! Front 0 holds the most-removable images: those not dominated by any
//! other point, i.e. no other image is at least as OOD everywhere and
//! strictly worse somewhere.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::OODTriple;
use crate::par;

/// True iff `a` is removed before `b`: `a` is at least as OOD as `b`
/// on all three metrics and strictly more OOD on at least one.
pub fn pareto_dominates(a: &OODTriple, b: &OODTriple) -> bool {
    let ge = a.ood_primary >= b.ood_primary
        && a.ood_general >= b.ood_general
        && a.ood_text_delta >= b.ood_text_delta;
    let strict = a.ood_primary > b.ood_primary
        || a.ood_general > b.ood_general
        || a.ood_text_delta > b.ood_text_delta;
    ge && strict
}

/// Result of front peeling: a partition of the scored ids into fronts,
/// with front 0 removed first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoAssignment {
    /// image_id -> front index (0-based).
    pub front_of: HashMap<String, usize>,
    /// Fronts in peel order; ids sorted ascending within each front.
    pub fronts: Vec<Vec<String>>,
}

impl ParetoAssignment {
    pub fn front_sizes(&self) -> Vec<usize> {
        self.fronts.iter().map(|f| f.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.front_of.len()
    }
}

/// Iterative non-dominated sorting.
///
/// Computes, for each point, the number of points dominating it; front
/// i+1 is the set whose dominators all lie in fronts <= i. Runs in
/// O(n^2) dominance checks with the counting pass parallelized.
pub fn peel_fronts(triples: &[OODTriple]) -> ParetoAssignment {
    let n = triples.len();
    if n == 0 {
        return ParetoAssignment {
            front_of: HashMap::new(),
            fronts: Vec::new(),
        };
    }

    let mut dominated_by: Vec<usize> = par::map_range(n, |i| {
        let mut count = 0;
        for j in 0..n {
            if j != i && pareto_dominates(&triples[j], &triples[i]) {
                count += 1;
            }
        }
        count
    });

    let mut assigned = vec![false; n];
    let mut front_of = HashMap::with_capacity(n);
    let mut fronts = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();

    while !remaining.is_empty() {
        let front_indices: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| dominated_by[i] == 0)
            .collect();
        debug_assert!(!front_indices.is_empty(), "dominance must be acyclic");

        let front_no = fronts.len();
        let mut ids: Vec<String> = front_indices
            .iter()
            .map(|&i| triples[i].image_id.clone())
            .collect();
        ids.sort_unstable();
        for id in &ids {
            front_of.insert(id.clone(), front_no);
        }
        for &i in &front_indices {
            assigned[i] = true;
        }
        remaining.retain(|&i| !assigned[i]);

        // Release the peeled points' dominance over the rest.
        let decrements: Vec<usize> = par::map_slice(&remaining, |&q| {
            front_indices
                .iter()
                .filter(|&&p| pareto_dominates(&triples[p], &triples[q]))
                .count()
        });
        for (slot, dec) in remaining.iter().zip(decrements) {
            dominated_by[*slot] -= dec;
        }

        fronts.push(ids);
    }

    ParetoAssignment { front_of, fronts }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: &str, a: f64, b: f64, c: f64) -> OODTriple {
        OODTriple {
            image_id: id.to_string(),
            ood_primary: a,
            ood_general: b,
            ood_text_delta: c,
        }
    }

    #[test]
    fn dominates_strict_on_all() {
        assert!(pareto_dominates(&t("a", 0.9, 0.8, 0.7), &t("b", 0.5, 0.5, 0.5)));
    }

    #[test]
    fn equal_points_do_not_dominate() {
        let a = t("a", 0.5, 0.5, 0.5);
        let b = t("b", 0.5, 0.5, 0.5);
        assert!(!pareto_dominates(&a, &b));
        assert!(!pareto_dominates(&b, &a));
    }

    #[test]
    fn incomparable_points_do_not_dominate() {
        let a = t("a", 0.9, 0.4, 0.7);
        let b = t("b", 0.5, 0.5, 0.5);
        assert!(!pareto_dominates(&a, &b));
        assert!(!pareto_dominates(&b, &a));
    }

    #[test]
    fn peel_hand_case() {
        let triples = vec![
            t("p1", 0.9, 0.9, 0.9),
            t("p2", 0.8, 0.1, 0.1),
            t("p3", 0.1, 0.8, 0.1),
            t("p4", 0.05, 0.05, 0.05),
        ];
        let assignment = peel_fronts(&triples);
        assert_eq!(
            assignment.fronts,
            vec![vec!["p1"], vec!["p2", "p3"], vec!["p4"]]
        );
        assert_eq!(assignment.front_of["p3"], 1);
    }

    #[test]
    fn identical_points_form_one_front() {
        let triples: Vec<OODTriple> =
            (0..10).map(|i| t(&format!("x{i}"), 0.4, 0.4, 0.4)).collect();
        let assignment = peel_fronts(&triples);
        assert_eq!(assignment.fronts.len(), 1);
        assert_eq!(assignment.fronts[0].len(), 10);
    }

    #[test]
    fn empty_input() {
        let assignment = peel_fronts(&[]);
        assert!(assignment.fronts.is_empty());
    }

    #[test]
    fn fronts_partition_and_are_mutually_nondominated() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let triples: Vec<OODTriple> = (0..200)
            .map(|i| {
                t(
                    &format!("r{i:03}"),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let by_id: HashMap<&str, &OODTriple> =
            triples.iter().map(|t| (t.image_id.as_str(), t)).collect();
        let assignment = peel_fronts(&triples);

        let total: usize = assignment.fronts.iter().map(|f| f.len()).sum();
        assert_eq!(total, triples.len());

        for front in &assignment.fronts {
            for a in front {
                for b in front {
                    assert!(!pareto_dominates(by_id[a.as_str()], by_id[b.as_str()]));
                }
            }
        }
        // Every point in front i+1 is dominated by someone in front i.
        for w in assignment.fronts.windows(2) {
            for b in &w[1] {
                assert!(w[0]
                    .iter()
                    .any(|a| pareto_dominates(by_id[a.as_str()], by_id[b.as_str()])));
            }
        }
    }
}

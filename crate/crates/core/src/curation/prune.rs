//! Pruning: kneedle-based halting over the peeled fronts, and exact
//! prune-to-size.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{kneedle, CurationError, OODTriple, ParetoAssignment};
use crate::acquisition::ImageRecord;

/// Outcome of knee-based halt selection over the three metric curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaltDecision {
    /// Knee x (cumulative images removed) per metric, where found.
    pub knee_primary: Option<f64>,
    pub knee_general: Option<f64>,
    pub knee_text_delta: Option<f64>,
    /// Max of the knee x values; the halt point.
    pub halt_x: Option<f64>,
    /// Remove fronts 0..=halt_front. `None` means no pruning.
    pub halt_front: Option<usize>,
}

impl HaltDecision {
    fn none() -> Self {
        HaltDecision {
            knee_primary: None,
            knee_general: None,
            knee_text_delta: None,
            halt_x: None,
            halt_front: None,
        }
    }

    pub fn knees(&self) -> [Option<f64>; 3] {
        [self.knee_primary, self.knee_general, self.knee_text_delta]
    }
}

/// Pick the halt front by running kneedle on each metric's curve of
/// mean front value (y) against cumulative images removed (x) and
/// taking the maximum knee x found across metrics.
///
/// With fewer than 3 fronts, or when no metric shows a knee, nothing is
/// pruned (the caller should surface a warning for the latter).
pub fn select_halt(
    assignment: &ParetoAssignment,
    triples: &[OODTriple],
    sensitivity: f64,
) -> Result<HaltDecision, CurationError> {
    if assignment.fronts.len() < 3 {
        return Ok(HaltDecision::none());
    }
    let by_id: HashMap<&str, &OODTriple> = triples
        .iter()
        .map(|t| (t.image_id.as_str(), t))
        .collect();

    let mut xs = Vec::with_capacity(assignment.fronts.len());
    let mut means = [Vec::new(), Vec::new(), Vec::new()];
    let mut cumulative = 0usize;
    for front in &assignment.fronts {
        let mut sums = [0.0f64; 3];
        for id in front {
            let t = by_id.get(id.as_str()).ok_or_else(|| {
                CurationError::Domain(format!("no triple for assigned id '{id}'"))
            })?;
            sums[0] += t.ood_primary;
            sums[1] += t.ood_general;
            sums[2] += t.ood_text_delta;
        }
        cumulative += front.len();
        xs.push(cumulative as f64);
        for (m, sum) in means.iter_mut().zip(sums) {
            m.push(sum / front.len() as f64);
        }
    }

    let knees: Vec<Option<f64>> = means
        .iter()
        .map(|ys| kneedle(&xs, ys, sensitivity))
        .collect::<Result<_, _>>()?;

    let halt_x = knees
        .iter()
        .flatten()
        .cloned()
        .fold(None::<f64>, |acc, x| Some(acc.map_or(x, |a| a.max(x))));

    let halt_front = halt_x.map(|hx| {
        // Largest front index whose cumulative removal fits within the
        // halt point; knees land on data points so this is exact, and
        // an x strictly inside a front rounds down to whole fronts.
        xs.iter().rposition(|&x| x <= hx).unwrap_or(0)
    });

    Ok(HaltDecision {
        knee_primary: knees[0],
        knee_general: knees[1],
        knee_text_delta: knees[2],
        halt_x,
        halt_front,
    })
}

/// Prune the records down to exactly `target` using the front order:
/// whole fronts are removed in ascending order while doing so keeps at
/// least `target` records; the final front is split by removing its
/// highest `ood_primary` members first (ties by id ascending).
///
/// Returns the kept records in their input order.
pub fn prune_to_size(
    assignment: &ParetoAssignment,
    records: &[ImageRecord],
    triples: &[OODTriple],
    target: usize,
) -> Result<Vec<ImageRecord>, CurationError> {
    if target > records.len() {
        return Err(CurationError::TargetTooLarge {
            target,
            available: records.len(),
        });
    }
    if target == 0 {
        return Err(CurationError::Domain("target must be positive".into()));
    }

    let primary_of: HashMap<&str, f64> = triples
        .iter()
        .map(|t| (t.image_id.as_str(), t.ood_primary))
        .collect();

    let total = records.len();
    let mut removed: HashSet<&str> = HashSet::new();
    let mut front_iter = assignment.fronts.iter();
    let mut partial: Option<&Vec<String>> = None;
    for front in front_iter.by_ref() {
        if total - removed.len() - front.len() >= target {
            removed.extend(front.iter().map(String::as_str));
        } else {
            partial = Some(front);
            break;
        }
    }

    let still_needed = total - removed.len() - target;
    if still_needed > 0 {
        let front = partial.ok_or_else(|| {
            CurationError::Domain("assignment does not cover all records".into())
        })?;
        let mut order: Vec<&str> = front.iter().map(String::as_str).collect();
        order.sort_by(|a, b| {
            let pa = primary_of.get(a).copied().unwrap_or(0.0);
            let pb = primary_of.get(b).copied().unwrap_or(0.0);
            pb.partial_cmp(&pa).unwrap().then_with(|| a.cmp(b))
        });
        removed.extend(order.into_iter().take(still_needed));
    }

    let kept: Vec<ImageRecord> = records
        .iter()
        .filter(|r| !removed.contains(r.id.as_str()))
        .cloned()
        .collect();
    debug_assert_eq!(kept.len(), target);
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{ImageRecord, ImageSource};

    fn record(id: &str) -> ImageRecord {
        ImageRecord {
            id: id.to_string(),
            uri: format!("mock://img/{id}"),
            source: ImageSource::Synthetic,
            concept_id: "c0".into(),
            caption: Some("a picture".into()),
            retrieval_similarity: None,
        }
    }

    /// Fronts of the given sizes with strictly decreasing metric values
    /// per front, so the assignment is consistent with dominance.
    fn fixture(sizes: &[usize]) -> (ParetoAssignment, Vec<ImageRecord>, Vec<OODTriple>) {
        let mut fronts = Vec::new();
        let mut front_of = HashMap::new();
        let mut records = Vec::new();
        let mut triples = Vec::new();
        let mut serial = 0usize;
        for (fi, &size) in sizes.iter().enumerate() {
            let mut ids = Vec::new();
            for m in 0..size {
                let id = format!("img{serial:04}");
                serial += 1;
                let base = 1.0 - fi as f64 * 0.1;
                triples.push(OODTriple {
                    image_id: id.clone(),
                    // Spread members a little so within-front order is
                    // exercised.
                    ood_primary: base - m as f64 * 1e-4,
                    ood_general: base,
                    ood_text_delta: 0.0,
                });
                records.push(record(&id));
                front_of.insert(id.clone(), fi);
                ids.push(id);
            }
            ids.sort();
            fronts.push(ids);
        }
        (ParetoAssignment { front_of, fronts }, records, triples)
    }

    #[test]
    fn exact_boundary_removes_whole_fronts() {
        let (assignment, records, triples) = fixture(&[10, 20, 70]);
        let kept = prune_to_size(&assignment, &records, &triples, 70).unwrap();
        assert_eq!(kept.len(), 70);
        let kept_ids: HashSet<_> = kept.iter().map(|r| r.id.as_str()).collect();
        for id in assignment.fronts[0].iter().chain(&assignment.fronts[1]) {
            assert!(!kept_ids.contains(id.as_str()));
        }
    }

    #[test]
    fn identity_target_keeps_everything() {
        let (assignment, records, triples) = fixture(&[10, 20, 70]);
        let kept = prune_to_size(&assignment, &records, &triples, 100).unwrap();
        assert_eq!(kept.len(), 100);
    }

    #[test]
    fn partial_front_removed_by_descending_primary() {
        let (assignment, records, triples) = fixture(&[10, 20, 70]);
        let kept = prune_to_size(&assignment, &records, &triples, 75).unwrap();
        assert_eq!(kept.len(), 75);
        let kept_ids: HashSet<_> = kept.iter().map(|r| r.id.clone()).collect();
        // Front 0 gone entirely, front 2 intact.
        assert!(assignment.fronts[0].iter().all(|id| !kept_ids.contains(id)));
        assert!(assignment.fronts[2].iter().all(|id| kept_ids.contains(id)));
        // Within front 1, the 15 removed are the highest ood_primary,
        // i.e. the first 15 in id order given the descending spread.
        let f1 = &assignment.fronts[1];
        let kept_in_f1: Vec<_> = f1.iter().filter(|id| kept_ids.contains(*id)).collect();
        assert_eq!(kept_in_f1.len(), 5);
        let primary: HashMap<&str, f64> = triples
            .iter()
            .map(|t| (t.image_id.as_str(), t.ood_primary))
            .collect();
        let max_kept = kept_in_f1
            .iter()
            .map(|id| primary[id.as_str()])
            .fold(f64::NEG_INFINITY, f64::max);
        let min_removed = f1
            .iter()
            .filter(|id| !kept_ids.contains(*id))
            .map(|id| primary[id.as_str()])
            .fold(f64::INFINITY, f64::min);
        assert!(max_kept <= min_removed);
    }

    #[test]
    fn target_larger_than_pool_is_an_error() {
        let (assignment, records, triples) = fixture(&[5]);
        assert!(matches!(
            prune_to_size(&assignment, &records, &triples, 6),
            Err(CurationError::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn fewer_than_three_fronts_means_no_pruning() {
        let (assignment, _, triples) = fixture(&[10, 20]);
        let decision = select_halt(&assignment, &triples, 1.0).unwrap();
        assert_eq!(decision.halt_front, None);
    }

    #[test]
    fn linear_curves_mean_no_knee_and_no_pruning() {
        // Means fall linearly with cumulative count: no curvature.
        let sizes = [10usize; 6];
        let (assignment, _, mut triples) = fixture(&sizes);
        let mut cumulative = 0.0;
        for (fi, front) in assignment.fronts.iter().enumerate() {
            cumulative += front.len() as f64;
            for t in triples.iter_mut() {
                if assignment.front_of[&t.image_id] == fi {
                    t.ood_primary = 1.0 - cumulative / 100.0;
                    t.ood_general = t.ood_primary;
                    t.ood_text_delta = 0.0;
                }
            }
        }
        let decision = select_halt(&assignment, &triples, 1.0).unwrap();
        assert_eq!(decision.halt_front, None);
        assert_eq!(decision.knees(), [None, None, None]);
    }
}

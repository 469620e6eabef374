//! Stage-by-stage accounting for a curation run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acquisition::{ImageRecord, ImageSource};

/// Record counts split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub real: usize,
    pub synthetic: usize,
}

impl StageCounts {
    pub fn of(records: &[ImageRecord]) -> Self {
        let real = records
            .iter()
            .filter(|r| r.source == ImageSource::Real)
            .count();
        StageCounts {
            real,
            synthetic: records.len() - real,
        }
    }

    pub fn total(self) -> usize {
        self.real + self.synthetic
    }
}

/// Counts after each curation stage plus the pruning diagnostics.
/// The counts must telescope: raw minus everything removed equals
/// retained, per source.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CurationReport {
    pub raw: StageCounts,
    pub after_dedup: StageCounts,
    pub after_leak: StageCounts,
    pub after_pareto: StageCounts,
    /// Multi-member duplicate component sizes: size -> count.
    pub duplicate_component_sizes: BTreeMap<usize, usize>,
    /// Knee x positions (cumulative removed) per metric, where found.
    pub knee_primary: Option<f64>,
    pub knee_general: Option<f64>,
    pub knee_text_delta: Option<f64>,
    /// Fronts 0..=halt were removed by knee-based pruning.
    pub halt_front: Option<usize>,
    pub warnings: Vec<String>,
}

impl CurationReport {
    pub fn removed_dedup(&self) -> StageCounts {
        diff(self.raw, self.after_dedup)
    }

    pub fn removed_leak(&self) -> StageCounts {
        diff(self.after_dedup, self.after_leak)
    }

    pub fn removed_pareto(&self) -> StageCounts {
        diff(self.after_leak, self.after_pareto)
    }

    /// raw - removed_dedup - removed_leak - removed_pareto = retained,
    /// for each source and (therefore) in total.
    pub fn telescopes(&self) -> bool {
        let ok = |raw: usize, d: usize, l: usize, p: usize, retained: usize| {
            raw.checked_sub(d)
                .and_then(|x| x.checked_sub(l))
                .and_then(|x| x.checked_sub(p))
                == Some(retained)
        };
        ok(
            self.raw.real,
            self.removed_dedup().real,
            self.removed_leak().real,
            self.removed_pareto().real,
            self.after_pareto.real,
        ) && ok(
            self.raw.synthetic,
            self.removed_dedup().synthetic,
            self.removed_leak().synthetic,
            self.removed_pareto().synthetic,
            self.after_pareto.synthetic,
        )
    }
}

fn diff(before: StageCounts, after: StageCounts) -> StageCounts {
    StageCounts {
        real: before.real.saturating_sub(after.real),
        synthetic: before.synthetic.saturating_sub(after.synthetic),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telescoping_holds_for_consistent_counts() {
        let report = CurationReport {
            raw: StageCounts { real: 100, synthetic: 50 },
            after_dedup: StageCounts { real: 90, synthetic: 50 },
            after_leak: StageCounts { real: 85, synthetic: 49 },
            after_pareto: StageCounts { real: 60, synthetic: 40 },
            ..CurationReport::default()
        };
        assert!(report.telescopes());
        assert_eq!(report.removed_dedup().real, 10);
        assert_eq!(report.removed_pareto().total(), 34);
    }

    #[test]
    fn telescoping_fails_when_counts_grow() {
        let report = CurationReport {
            raw: StageCounts { real: 10, synthetic: 0 },
            after_dedup: StageCounts { real: 12, synthetic: 0 },
            after_leak: StageCounts { real: 12, synthetic: 0 },
            after_pareto: StageCounts { real: 12, synthetic: 0 },
            ..CurationReport::default()
        };
        assert!(!report.telescopes());
    }
}

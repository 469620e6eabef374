//! Final manifest emission.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError, Stage};
use crate::acquisition::ImageRecord;
use crate::curation::CurationReport;
use crate::util;

/// The pipeline's product: the retained records plus the accounting
/// report and the exact configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub report: CurationReport,
    pub config: PipelineConfig,
    pub engine_version: String,
    pub created_unix: u64,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_LOCK_FILE: &str = "config.lock.json";

#[derive(Serialize, Deserialize)]
struct ConfigLock<'a> {
    engine_version: &'a str,
    config: &'a PipelineConfig,
}

fn stage_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Stage {
        stage: Stage::Manifest,
        message: message.into(),
    }
}

/// Write `manifest.jsonl`, `report.json`, and `config.lock.json` into
/// `dir`, atomically. The report must telescope and record ids must be
/// unique; an empty retained set is valid but loudly warned about.
///
/// Secrets never land in the lock file: endpoint tokens are stored as
/// their `${VAR}` placeholders and resolved only at provider
/// construction.
pub fn emit_manifest(
    records: &[ImageRecord],
    report: &CurationReport,
    config: &PipelineConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if !report.telescopes() {
        return Err(stage_err(format!(
            "report does not telescope: raw {:?} dedup {:?} leak {:?} pareto {:?}",
            report.raw, report.after_dedup, report.after_leak, report.after_pareto
        )));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for record in records {
        if !seen.insert(record.id.as_str()) {
            return Err(stage_err(format!("duplicate retained id '{}'", record.id)));
        }
    }
    if records.is_empty() {
        log::warn!("retained set is EMPTY; the manifest is valid but the run kept nothing");
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let report_path = dir.join(REPORT_FILE);
    let lock_path = dir.join(CONFIG_LOCK_FILE);
    util::write_jsonl(&manifest_path, records).map_err(PipelineError::Io)?;
    util::write_json(&report_path, report).map_err(PipelineError::Io)?;
    util::write_json(
        &lock_path,
        &ConfigLock {
            engine_version: crate::ENGINE_VERSION,
            config,
        },
    )
    .map_err(PipelineError::Io)?;
    Ok(vec![manifest_path, report_path, lock_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::ImageSource;
    use crate::curation::StageCounts;

    fn record(i: usize) -> ImageRecord {
        ImageRecord {
            id: format!("r{i:03}"),
            uri: format!("mock://img/{i}"),
            source: ImageSource::Synthetic,
            concept_id: "c".into(),
            caption: Some("cap".into()),
            retrieval_similarity: None,
        }
    }

    fn consistent_report(n: usize) -> CurationReport {
        let counts = StageCounts {
            real: 0,
            synthetic: n,
        };
        CurationReport {
            raw: counts,
            after_dedup: counts,
            after_leak: counts,
            after_pareto: counts,
            ..CurationReport::default()
        }
    }

    #[test]
    fn manifest_line_count_matches_records() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<ImageRecord> = (0..75).map(record).collect();
        let config = crate::pipeline::tests::offline_config(dir.path());
        emit_manifest(&records, &consistent_report(75), &config, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text.lines().count(), 75);
        assert!(dir.path().join(REPORT_FILE).exists());
        assert!(dir.path().join(CONFIG_LOCK_FILE).exists());
    }

    #[test]
    fn non_telescoping_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::pipeline::tests::offline_config(dir.path());
        let mut report = consistent_report(2);
        report.after_pareto = StageCounts {
            real: 0,
            synthetic: 5,
        };
        assert!(emit_manifest(&[record(0)], &report, &config, dir.path()).is_err());
    }

    #[test]
    fn empty_retained_set_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::pipeline::tests::offline_config(dir.path());
        emit_manifest(&[], &consistent_report(0), &config, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.is_empty());
    }
}

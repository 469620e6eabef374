//! Stage checkpoints, digest verification, and the workspace lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::util::{self, file_digest};

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Concepts,
    Expand,
    Validate,
    Retrieve,
    Captions,
    Synth,
    Merge,
    Dedup,
    Leak,
    Score,
    Prune,
    Manifest,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Concepts,
        Stage::Expand,
        Stage::Validate,
        Stage::Retrieve,
        Stage::Captions,
        Stage::Synth,
        Stage::Merge,
        Stage::Dedup,
        Stage::Leak,
        Stage::Score,
        Stage::Prune,
        Stage::Manifest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Concepts => "concepts",
            Stage::Expand => "expand",
            Stage::Validate => "validate",
            Stage::Retrieve => "retrieve",
            Stage::Captions => "captions",
            Stage::Synth => "synth",
            Stage::Merge => "merge",
            Stage::Dedup => "dedup",
            Stage::Leak => "leak",
            Stage::Score => "score",
            Stage::Prune => "prune",
            Stage::Manifest => "manifest",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Done,
}

/// One stage's checkpoint: status plus content digests of its output
/// files (workspace-relative path -> sha256).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageCheckpoint {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointLog {
    pub engine_version: String,
    pub created_unix: u64,
    pub stages: Vec<StageCheckpoint>,
}

const CHECKPOINT_FILE: &str = "checkpoints.json";

impl CheckpointLog {
    pub fn fresh() -> Self {
        CheckpointLog {
            engine_version: crate::ENGINE_VERSION.to_string(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageCheckpoint {
                    stage,
                    status: StageStatus::Pending,
                    outputs: BTreeMap::new(),
                })
                .collect(),
        }
    }

    pub fn path(workspace: &Path) -> PathBuf {
        workspace.join(CHECKPOINT_FILE)
    }

    pub fn load(workspace: &Path) -> Result<Option<Self>, PipelineError> {
        let path = Self::path(workspace);
        if !path.exists() {
            return Ok(None);
        }
        let log: CheckpointLog = util::read_json(&path).map_err(PipelineError::Io)?;
        Ok(Some(log))
    }

    pub fn save(&self, workspace: &Path) -> Result<(), PipelineError> {
        util::write_json(&Self::path(workspace), self).map_err(PipelineError::Io)?;
        Ok(())
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.stages
            .iter()
            .any(|s| s.stage == stage && s.status == StageStatus::Done)
    }

    pub fn mark_done(
        &mut self,
        stage: Stage,
        outputs: BTreeMap<String, String>,
    ) -> Result<(), PipelineError> {
        let slot = self
            .stages
            .iter_mut()
            .find(|s| s.stage == stage)
            .ok_or_else(|| PipelineError::Corruption {
                stage,
                message: "stage missing from checkpoint log".into(),
            })?;
        slot.status = StageStatus::Done;
        slot.outputs = outputs;
        Ok(())
    }

    /// A stage may run only when all predecessors are done: done stages
    /// must form a prefix of the stage order.
    pub fn check_prefix(&self) -> Result<(), PipelineError> {
        let mut seen_pending = false;
        for checkpoint in &self.stages {
            match checkpoint.status {
                StageStatus::Pending => seen_pending = true,
                StageStatus::Done if seen_pending => {
                    return Err(PipelineError::Corruption {
                        stage: checkpoint.stage,
                        message: "done stage follows a pending one".into(),
                    })
                }
                StageStatus::Done => {}
            }
        }
        Ok(())
    }

    /// Verify every done stage's outputs still exist with matching
    /// digests.
    pub fn verify(&self, workspace: &Path) -> Result<(), PipelineError> {
        self.check_prefix()?;
        for checkpoint in &self.stages {
            if checkpoint.status != StageStatus::Done {
                continue;
            }
            for (rel, expected) in &checkpoint.outputs {
                let path = workspace.join(rel);
                let actual = file_digest(&path).map_err(|e| PipelineError::Corruption {
                    stage: checkpoint.stage,
                    message: format!("output '{rel}' unreadable: {e}"),
                })?;
                if &actual != expected {
                    return Err(PipelineError::Corruption {
                        stage: checkpoint.stage,
                        message: format!("digest mismatch for '{rel}'"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn first_pending(&self) -> Option<Stage> {
        self.stages
            .iter()
            .find(|s| s.status == StageStatus::Pending)
            .map(|s| s.stage)
    }
}

/// Exclusive ownership of a workspace while a pipeline runs. The lock
/// file is removed on drop.
pub struct WorkspaceLock {
    path: PathBuf,
}

const LOCK_FILE: &str = ".pas.lock";

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(workspace).map_err(PipelineError::Io)?;
        let path = workspace.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                use std::io::Write;
                let _ = writeln!(file, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(path))
            }
            Err(e) => Err(PipelineError::Io(e)),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

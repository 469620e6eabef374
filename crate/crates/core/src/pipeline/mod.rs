//! End-to-end orchestration: configuration, stage sequencing, atomic
//! checkpoints, resumability, and manifest emission.

mod checkpoint;
mod manifest;
mod providers;
mod run;

pub use checkpoint::{CheckpointLog, Stage, StageCheckpoint, StageStatus, WorkspaceLock};
pub use manifest::{emit_manifest, DatasetManifest};
pub use providers::ProviderSet;
pub use run::{run_pipeline, PipelineRunner, RunOptions, RunOutcome};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionConfig;
use crate::concepts::{DiscoveryConfig, DomainSpec};
use crate::curation::{DedupConfig, LeakFilterConfig};
use crate::gateway::{ProviderEndpoint, ProviderKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", violations.join("\n  "))]
    Config { violations: Vec<String> },
    #[error("stage '{stage}' failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("workspace corruption at stage '{stage}': {message}")]
    Corruption { stage: Stage, message: String },
    #[error("workspace already locked by another pipeline instance: {0}")]
    Locked(PathBuf),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 stage, 4 corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Corruption { .. } => 4,
            PipelineError::Locked(_) | PipelineError::Io(_) => 3,
        }
    }
}

/// Which service a configured endpoint plays in the pipeline. The
/// validator is a separate role so it can be a different model identity
/// than the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderRole {
    Chat,
    ValidatorChat,
    TextEmbed,
    ImageEmbed,
    ImageGen,
    OodProb,
}

impl ProviderRole {
    pub const ALL: [ProviderRole; 6] = [
        ProviderRole::Chat,
        ProviderRole::ValidatorChat,
        ProviderRole::TextEmbed,
        ProviderRole::ImageEmbed,
        ProviderRole::ImageGen,
        ProviderRole::OodProb,
    ];

    pub fn expected_kind(self) -> ProviderKind {
        match self {
            ProviderRole::Chat | ProviderRole::ValidatorChat => ProviderKind::Chat,
            ProviderRole::TextEmbed => ProviderKind::TextEmbed,
            ProviderRole::ImageEmbed => ProviderKind::ImageEmbed,
            ProviderRole::ImageGen => ProviderKind::ImageGen,
            ProviderRole::OodProb => ProviderKind::OodProb,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderRole::Chat => "chat",
            ProviderRole::ValidatorChat => "validator_chat",
            ProviderRole::TextEmbed => "text_embed",
            ProviderRole::ImageEmbed => "image_embed",
            ProviderRole::ImageGen => "image_gen",
            ProviderRole::OodProb => "ood_prob",
        }
    }
}

/// Input and output locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    /// Stage outputs, checkpoints, and the final manifest land here.
    pub workspace: PathBuf,
    /// Prebuilt retrieval-space store of real-image embeddings.
    pub image_store: PathBuf,
    /// Joint-space tag the image store was built with; must match the
    /// text embedder. Defaults to the text embedder's model name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_store_tag: Option<String>,
    /// Copy-detection embeddings of protected (test-set) images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protected_store: Option<PathBuf>,
}

/// How the generalized concept bank for the second OOD metric is
/// obtained: from a file (one concept per line) or, by default, from
/// one generation round prompted at a generic super-domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralBankConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts_path: Option<PathBuf>,
    #[serde(default = "default_general_domain")]
    pub domain: DomainSpec,
}

fn default_general_domain() -> DomainSpec {
    DomainSpec {
        name: "everyday objects and scenes".into(),
        description: "common object or scene category".into(),
    }
}

impl Default for GeneralBankConfig {
    fn default() -> Self {
        GeneralBankConfig {
            concepts_path: None,
            domain: default_general_domain(),
        }
    }
}

/// Knobs for the deterministic offline providers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineSimConfig {
    pub universe_size: usize,
    pub embed_dim: usize,
    pub copy_clusters: u64,
    pub copy_jitter: f64,
}

impl Default for OfflineSimConfig {
    fn default() -> Self {
        OfflineSimConfig {
            universe_size: 50,
            embed_dim: 64,
            copy_clusters: 4096,
            copy_jitter: 0.3,
        }
    }
}

fn default_embed_batch() -> usize {
    64
}
fn default_ood_batch() -> usize {
    256
}
fn default_sensitivity() -> f64 {
    1.0
}

/// Full pipeline configuration. `base_seed` is authoritative: it is
/// copied into the discovery and dedup seeds when the config resolves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub base_seed: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_size: Option<usize>,
    #[serde(default = "default_sensitivity")]
    pub kneedle_sensitivity: f64,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub dedup: DedupConfig,
    #[serde(default)]
    pub leak: LeakFilterConfig,
    #[serde(default)]
    pub general_bank: GeneralBankConfig,
    #[serde(default)]
    pub providers: BTreeMap<ProviderRole, ProviderEndpoint>,
    pub paths: PathsConfig,
    /// Force the deterministic in-process mock providers. The
    /// `PAS_OFFLINE=1` environment variable forces this on.
    #[serde(default)]
    pub offline: bool,
    #[serde(default)]
    pub offline_sim: OfflineSimConfig,
    #[serde(default = "default_embed_batch")]
    pub embed_batch_size: usize,
    #[serde(default = "default_ood_batch")]
    pub ood_batch_size: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let config: PipelineConfig = crate::util::read_json(path)?;
        Ok(config)
    }

    /// Whether this run uses the offline mock providers.
    pub fn effective_offline(&self) -> bool {
        self.offline || std::env::var("PAS_OFFLINE").map(|v| v == "1").unwrap_or(false)
    }

    /// Propagate the pipeline seed into the per-module seeds and apply
    /// the offline override. The resolved config is what runs and what
    /// lands in `config.lock.json`.
    pub fn resolved(mut self) -> Self {
        self.discovery.base_seed = self.base_seed;
        self.dedup.rng_seed = self.base_seed;
        self.offline = self.effective_offline();
        self
    }

    /// Check every invariant and report all violations at once.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if let Err(e) = self.domain.validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.discovery.validate() {
            violations.push(e.to_string());
        }
        if let Err(e) = self.acquisition.validate() {
            violations.push(format!("acquisition: {e}"));
        }
        if let Err(e) = self.dedup.validate() {
            violations.push(format!("dedup: {e}"));
        }
        if let Err(e) = self.leak.validate() {
            violations.push(format!("leak: {e}"));
        }
        if self.kneedle_sensitivity <= 0.0 {
            violations.push(format!(
                "kneedle_sensitivity {} must be positive",
                self.kneedle_sensitivity
            ));
        }
        if self.target_size == Some(0) {
            violations.push("target_size must be positive".into());
        }
        if self.embed_batch_size == 0 || self.ood_batch_size == 0 {
            violations.push("batch sizes must be >= 1".into());
        }
        if self.offline_sim.universe_size == 0 || self.offline_sim.embed_dim == 0 {
            violations.push("offline_sim universe_size and embed_dim must be >= 1".into());
        }

        if !self.effective_offline() {
            for role in ProviderRole::ALL {
                match self.providers.get(&role) {
                    None => violations.push(format!(
                        "missing provider endpoint for role '{}' (required by the {} stage)",
                        role.as_str(),
                        stage_needing(role)
                    )),
                    Some(endpoint) => {
                        if endpoint.kind != role.expected_kind() {
                            violations.push(format!(
                                "provider '{}' has kind '{}', expected '{}'",
                                role.as_str(),
                                endpoint.kind.as_str(),
                                role.expected_kind().as_str()
                            ));
                        }
                        if let Err(e) = endpoint.validate() {
                            violations.push(format!("provider '{}': {e}", role.as_str()));
                        }
                        if let Some(token) = &endpoint.auth_token {
                            if let Err(e) = providers::resolve_secret(token) {
                                violations.push(format!("provider '{}': {e}", role.as_str()));
                            }
                        }
                    }
                }
            }
            if let (Some(generator), Some(validator)) = (
                self.providers.get(&ProviderRole::Chat),
                self.providers.get(&ProviderRole::ValidatorChat),
            ) {
                if generator.model_name == validator.model_name {
                    violations.push(format!(
                        "validator model '{}' must differ from the generator model",
                        validator.model_name
                    ));
                }
            }
        }

        if !self.paths.image_store.exists() {
            violations.push(format!(
                "image store not found: {}",
                self.paths.image_store.display()
            ));
        } else if !crate::index::ids_path(&self.paths.image_store).exists() {
            violations.push(format!(
                "image store ids sidecar not found: {}",
                crate::index::ids_path(&self.paths.image_store).display()
            ));
        }
        if let Some(protected) = &self.paths.protected_store {
            if !protected.exists() {
                violations.push(format!("protected store not found: {}", protected.display()));
            }
        }
        if let Some(general) = &self.general_bank.concepts_path {
            if !general.exists() {
                violations.push(format!(
                    "general concept bank not found: {}",
                    general.display()
                ));
            }
        }
        violations
    }

    /// Validate and wrap violations into an error.
    pub fn validated(self) -> Result<Self, PipelineError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(PipelineError::Config { violations })
        }
    }
}

fn stage_needing(role: ProviderRole) -> &'static str {
    match role {
        ProviderRole::Chat => "concepts/expand/captions",
        ProviderRole::ValidatorChat => "validate",
        ProviderRole::TextEmbed => "retrieve",
        ProviderRole::ImageEmbed => "dedup/leak",
        ProviderRole::ImageGen => "synth",
        ProviderRole::OodProb => "score",
    }
}

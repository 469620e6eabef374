//! Domain concept bank: types, canonicalization, and persistence.
//!
//! Banks are persisted as line-delimited JSON, one concept per line
//! with fields `id, text, key, origin, parent_id, iteration, validated`.
//! A `<path>.meta.json` sidecar carries the domain, phase, and (for
//! initial banks) the generation transcript that expansion reuses as
//! context.

mod discovery;

pub use discovery::{
    expand_concepts, generate_initial_concepts, validate_concepts, Transcript, ValidationStats,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, GatewayError};
use crate::util::{self, stable_id};

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid discovery config: {0}")]
    InvalidConfig(String),
    #[error("no concepts after the first generation round")]
    EmptyDomain,
    #[error("bank phase is {found:?}, expected {expected:?}")]
    WrongPhase { expected: BankPhase, found: BankPhase },
    #[error("stage failure: {0}")]
    Stage(String),
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The two strings that define a domain to the language models: its
/// name (e.g. "birds") and a description of the concept type that makes
/// it up (e.g. "bird species").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub description: String,
}

impl DomainSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Result<Self, DiscoveryError> {
        let spec = DomainSpec {
            name: name.into(),
            description: description.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if self.name.trim().is_empty() {
            return Err(DiscoveryError::InvalidDomain("empty domain name".into()));
        }
        if self.description.trim().is_empty() {
            return Err(DiscoveryError::InvalidDomain(
                "empty domain description".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptOrigin {
    Generated,
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankPhase {
    Initial,
    Expanded,
    Validated,
}

/// One concept with provenance and validation state. `key` is the
/// canonical uniqueness key; `text` preserves display casing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub text: String,
    pub key: String,
    pub origin: ConceptOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub iteration: u32,
    pub validated: Validation,
}

impl Concept {
    pub(crate) fn new(
        canonical: Canonical,
        origin: ConceptOrigin,
        parent_id: Option<String>,
        iteration: u32,
    ) -> Self {
        Concept {
            id: stable_id(&["concept", &canonical.key]),
            text: canonical.display,
            key: canonical.key,
            origin,
            parent_id,
            iteration,
            validated: Validation::Pending,
        }
    }
}

/// Ordered concept bank for one domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptBank {
    pub domain: DomainSpec,
    pub concepts: Vec<Concept>,
    pub phase: BankPhase,
}

impl ConceptBank {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &Concept> {
        self.concepts
            .iter()
            .filter(|c| c.validated == Validation::Accepted)
    }

    /// Structural invariants; exercised by tests after every stage.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut keys = std::collections::HashSet::new();
        let ids: std::collections::HashSet<&str> =
            self.concepts.iter().map(|c| c.id.as_str()).collect();
        let mut iterations: std::collections::HashMap<ConceptOrigin, Vec<u32>> = Default::default();
        for c in &self.concepts {
            if !keys.insert(c.key.as_str()) {
                return Err(format!("duplicate key '{}'", c.key));
            }
            match (c.origin, &c.parent_id) {
                (ConceptOrigin::Generated, Some(_)) => {
                    return Err(format!("generated concept '{}' has a parent", c.text))
                }
                (ConceptOrigin::Expanded, None) => {
                    return Err(format!("expanded concept '{}' lacks a parent", c.text))
                }
                (ConceptOrigin::Expanded, Some(pid)) if !ids.contains(pid.as_str()) => {
                    return Err(format!("parent '{pid}' of '{}' not in bank", c.text))
                }
                _ => {}
            }
            if self.phase == BankPhase::Validated && c.validated == Validation::Pending {
                return Err(format!("pending concept '{}' in validated bank", c.text));
            }
            iterations.entry(c.origin).or_default().push(c.iteration);
        }
        for (origin, mut rounds) in iterations {
            rounds.sort_unstable();
            rounds.dedup();
            for (expected, &actual) in rounds.iter().enumerate() {
                if actual != expected as u32 {
                    return Err(format!(
                        "{origin:?} iterations not contiguous from 0: {rounds:?}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A canonicalized concept string: `display` keeps the original casing,
/// `key` is the case-folded uniqueness key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    pub display: String,
    pub key: String,
}

/// Canonicalize a raw concept string: strip list markers and wrapping
/// quotes, trim, collapse inner whitespace. Returns `None` when nothing
/// remains.
pub fn canonicalize_concept(raw: &str) -> Option<Canonical> {
    let mut s = crate::gateway::strip_list_marker(raw.trim()).trim();
    loop {
        let stripped = strip_wrapping_quotes(s);
        if stripped == s {
            break;
        }
        s = stripped.trim();
    }
    let display = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if display.is_empty() {
        return None;
    }
    let key = display.to_lowercase();
    Some(Canonical { display, key })
}

fn strip_wrapping_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];
    for (open, close) in PAIRS {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            let mut chars = s.chars();
            chars.next();
            chars.next_back();
            return chars.as_str();
        }
    }
    s
}

/// Saturation knobs and prompt templates for discovery.
///
/// Templates take `{domain_name}`, `{domain_description}`, and (for
/// expansion and validation) `{concept}` placeholders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Generation stops when a round's new canonical concepts fall
    /// below this fraction of the accumulated set.
    pub lambda1: f64,
    /// Same rule for expansion rounds.
    pub lambda2: f64,
    pub max_generation_rounds: u32,
    pub max_expansion_rounds: u32,
    pub base_seed: i64,
    pub generation_template: String,
    pub expansion_template: String,
    pub validation_template: String,
}

pub const DEFAULT_GENERATION_TEMPLATE: &str = "I am assembling an image dataset for the domain \
\"{domain_name}\". List as many distinct {domain_description} as you can, one per line. \
Output only the list, no commentary.";

pub const DEFAULT_EXPANSION_TEMPLATE: &str = "Within the domain \"{domain_name}\", list \
{domain_description} that are closely similar to \"{concept}\", one per line. \
Output only the list, no commentary.";

pub const DEFAULT_VALIDATION_TEMPLATE: &str = "In the domain \"{domain_name}\", is \"{concept}\" \
a valid example of a {domain_description}? Answer true or false.";

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            lambda1: 0.01,
            lambda2: 0.01,
            max_generation_rounds: 50,
            max_expansion_rounds: 10,
            base_seed: 0,
            generation_template: DEFAULT_GENERATION_TEMPLATE.to_string(),
            expansion_template: DEFAULT_EXPANSION_TEMPLATE.to_string(),
            validation_template: DEFAULT_VALIDATION_TEMPLATE.to_string(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        for (name, value) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(DiscoveryError::InvalidConfig(format!(
                    "{name} = {value} outside (0,1)"
                )));
            }
        }
        if self.max_generation_rounds == 0 || self.max_expansion_rounds == 0 {
            return Err(DiscoveryError::InvalidConfig(
                "round caps must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn render_generation_prompt(&self, domain: &DomainSpec) -> String {
        render(&self.generation_template, domain, None)
    }

    pub fn render_expansion_prompt(&self, domain: &DomainSpec, concept: &str) -> String {
        render(&self.expansion_template, domain, Some(concept))
    }

    pub fn render_validation_prompt(&self, domain: &DomainSpec, concept: &str) -> String {
        render(&self.validation_template, domain, Some(concept))
    }
}

pub(crate) fn render(template: &str, domain: &DomainSpec, concept: Option<&str>) -> String {
    let mut out = template
        .replace("{domain_name}", &domain.name)
        .replace("{domain_description}", &domain.description);
    if let Some(c) = concept {
        out = out.replace("{concept}", c);
    }
    out
}

/// Sidecar metadata stored next to a persisted bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankMeta {
    pub domain: DomainSpec,
    pub phase: BankPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<ChatMessage>>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Persist a bank as JSONL plus its meta sidecar.
pub fn save_bank(
    bank: &ConceptBank,
    path: &Path,
    history: Option<&Transcript>,
) -> Result<(), DiscoveryError> {
    util::write_jsonl(path, &bank.concepts)?;
    let meta = BankMeta {
        domain: bank.domain.clone(),
        phase: bank.phase,
        history: history.cloned(),
    };
    util::write_json(&meta_path(path), &meta)?;
    Ok(())
}

/// Load a bank persisted by [`save_bank`].
pub fn load_bank(path: &Path) -> Result<(ConceptBank, Option<Transcript>), DiscoveryError> {
    let concepts: Vec<Concept> = util::read_jsonl(path)?;
    let meta: BankMeta = util::read_json(&meta_path(path))?;
    Ok((
        ConceptBank {
            domain: meta.domain,
            concepts,
            phase: meta.phase,
        },
        meta.history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_whitespace() {
        let c = canonicalize_concept("  Canada   Goose ").unwrap();
        assert_eq!(c.display, "Canada Goose");
        assert_eq!(c.key, "canada goose");
    }

    #[test]
    fn canonicalize_list_marker() {
        assert_eq!(canonicalize_concept("1. Paella").unwrap().display, "Paella");
    }

    #[test]
    fn canonicalize_quotes() {
        assert_eq!(
            canonicalize_concept("\"Harpy Eagle\"").unwrap().display,
            "Harpy Eagle"
        );
        assert_eq!(
            canonicalize_concept("“Golden Eagle”").unwrap().display,
            "Golden Eagle"
        );
    }

    #[test]
    fn canonicalize_empty_is_invalid() {
        assert!(canonicalize_concept("").is_none());
        assert!(canonicalize_concept("  \"\"  ").is_none());
        assert!(canonicalize_concept("3.").is_none());
    }

    #[test]
    fn domain_spec_rejects_blank_fields() {
        assert!(DomainSpec::new("  ", "bird species").is_err());
        assert!(DomainSpec::new("birds", "\t").is_err());
        assert!(DomainSpec::new("birds", "bird species").is_ok());
    }

    #[test]
    fn config_bounds() {
        let mut config = DiscoveryConfig::default();
        assert!(config.validate().is_ok());
        config.lambda1 = 0.0;
        assert!(config.validate().is_err());
        config.lambda1 = 1.0;
        assert!(config.validate().is_err());
        config.lambda1 = 0.5;
        config.max_expansion_rounds = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn bank_round_trips_with_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        let domain = DomainSpec::new("birds", "bird species").unwrap();
        let concept = Concept::new(
            canonicalize_concept("Canada Goose").unwrap(),
            ConceptOrigin::Generated,
            None,
            0,
        );
        let bank = ConceptBank {
            domain,
            concepts: vec![concept],
            phase: BankPhase::Initial,
        };
        save_bank(&bank, &path, Some(&vec![ChatMessage::system("s")])).unwrap();
        let (loaded, history) = load_bank(&path).unwrap();
        assert_eq!(loaded.concepts, bank.concepts);
        assert_eq!(loaded.phase, BankPhase::Initial);
        assert_eq!(history.unwrap().len(), 1);
    }
}

//! Deterministic in-process providers.
//!
//! Two families:
//!
//! - **Scripted** ([`MockScript`], [`ScriptedChatProvider`]): a test
//!   supplies a total mapping from request fingerprint (kind, seed,
//!   prompt hash) to canned response. An unknown fingerprint is a hard
//!   error, never a silent default.
//! - **Simulated** (`Sim*`): self-contained providers that derive every
//!   reply from stable hashes of the request, so full offline pipeline
//!   runs are reproducible byte for byte. `SimChatProvider` recognizes
//!   which prompt template produced a request by matching the rendered
//!   text back against the configured templates.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::prelude::*;
use rand::seq::SliceRandom;
use regex::Regex;

use super::{
    ChatProvider, ChatRequest, EmbedItem, EmbedProvider, GatewayError, GeneratedImages,
    ImageGenProvider, OODProbRow, OodProbProvider, ProviderKind,
};
use crate::util::{stable_id, stable_seed};

/// Fingerprint of a provider request: kind, seed, and prompt hash.
pub fn fingerprint(kind: ProviderKind, seed: i64, prompt: &str) -> String {
    stable_id(&[kind.as_str(), &seed.to_string(), prompt])
}

/// Ordered mapping from request fingerprint to canned response.
#[derive(Debug, Default, Clone)]
pub struct MockScript {
    entries: HashMap<String, String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: ProviderKind, seed: i64, prompt: &str, response: &str) -> Self {
        self.entries
            .insert(fingerprint(kind, seed, prompt), response.to_string());
        self
    }

    pub fn lookup(
        &self,
        kind: ProviderKind,
        seed: i64,
        prompt: &str,
    ) -> Result<&str, GatewayError> {
        let fp = fingerprint(kind, seed, prompt);
        self.entries
            .get(&fp)
            .map(String::as_str)
            .ok_or(GatewayError::ScriptMiss { fingerprint: fp })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Chat provider answering strictly from a [`MockScript`].
pub struct ScriptedChatProvider {
    script: MockScript,
    model: String,
    calls: AtomicU64,
}

impl ScriptedChatProvider {
    pub fn new(model: impl Into<String>, script: MockScript) -> Self {
        ScriptedChatProvider {
            script,
            model: model.into(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lookup(ProviderKind::Chat, request.seed, request.last_user_content())
            .map(str::to_string)
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// The prompt templates a [`SimChatProvider`] matches requests against.
#[derive(Debug, Clone)]
pub struct SimTemplates {
    pub generation: String,
    pub expansion: String,
    pub validation: String,
    pub caption: String,
}

struct TemplateMatcher {
    regex: Regex,
}

impl TemplateMatcher {
    /// Turn a template with `{placeholder}` slots into an anchored
    /// regex; the first occurrence of each placeholder becomes a named
    /// capture.
    fn new(template: &str) -> Self {
        let mut pattern = regex::escape(template);
        for name in ["domain_name", "domain_description", "concept"] {
            let slot = regex::escape(&format!("{{{name}}}"));
            if let Some(pos) = pattern.find(&slot) {
                pattern.replace_range(pos..pos + slot.len(), &format!("(?s:(?P<{name}>.+?))"));
            }
            while let Some(pos) = pattern.find(&slot) {
                pattern.replace_range(pos..pos + slot.len(), "(?s:.+?)");
            }
        }
        TemplateMatcher {
            regex: Regex::new(&format!("^{pattern}$")).expect("template regex"),
        }
    }

    fn capture<'t>(&self, prompt: &'t str, group: &str) -> Option<&'t str> {
        self.regex
            .captures(prompt)
            .and_then(|c| c.name(group))
            .map(|m| m.as_str())
    }

    fn matches(&self, prompt: &str) -> bool {
        self.regex.is_match(prompt)
    }
}

const VARIANT_PREFIXES: [&str; 3] = ["Greater", "Lesser", "Eastern"];

/// Offline chat model over a closed universe of concept names.
///
/// Generation rounds: round 1 (seed = base_seed + 1) yields the whole
/// universe in a seed-shuffled order, later rounds yield a subset, so
/// the saturation rule stops generation at round 2. Expansion proposes
/// prefixed variants of base concepts and nothing for variants, so
/// expansion saturates after the variants stop adding new names.
/// Validation rejects roughly a tenth of concepts by hash. Captions are
/// one deterministic sentence per (concept, seed).
pub struct SimChatProvider {
    model: String,
    base_seed: i64,
    universe: Vec<String>,
    generation: TemplateMatcher,
    expansion: TemplateMatcher,
    validation: TemplateMatcher,
    caption: TemplateMatcher,
    calls: AtomicU64,
}

impl SimChatProvider {
    pub fn new(
        model: impl Into<String>,
        base_seed: i64,
        universe_size: usize,
        templates: &SimTemplates,
    ) -> Self {
        let universe = (0..universe_size)
            .map(|i| format!("Mock Concept {i:03}"))
            .collect();
        SimChatProvider {
            model: model.into(),
            base_seed,
            universe,
            generation: TemplateMatcher::new(&templates.generation),
            expansion: TemplateMatcher::new(&templates.expansion),
            validation: TemplateMatcher::new(&templates.validation),
            caption: TemplateMatcher::new(&templates.caption),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn generation_reply(&self, domain: &str, seed: i64) -> String {
        let round = seed.wrapping_sub(self.base_seed);
        let mut names = self.universe.clone();
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(stable_seed(&["gen", domain, &seed.to_string()]));
        names.shuffle(&mut rng);
        if round != 1 {
            names.truncate(self.universe.len() / 3);
        }
        names.join("\n")
    }

    fn expansion_reply(&self, concept: &str) -> String {
        if VARIANT_PREFIXES.iter().any(|p| concept.starts_with(p)) {
            return String::new();
        }
        VARIANT_PREFIXES
            .iter()
            .filter(|prefix| stable_seed(&["expand", concept, prefix]) % 2 == 0)
            .map(|prefix| format!("{prefix} {concept}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validation_reply(&self, concept: &str) -> String {
        if stable_seed(&["validate", &concept.to_lowercase()]) % 10 == 0 {
            "false".to_string()
        } else {
            "true".to_string()
        }
    }

    fn caption_reply(&self, concept: &str, seed: i64) -> String {
        let variant = stable_seed(&["caption", concept, &seed.to_string()]) % 1000;
        format!("A detailed photograph of {concept} in natural light, study {variant:03}.")
    }
}

impl ChatProvider for SimChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.last_user_content();
        if let Some(concept) = self.expansion.capture(prompt, "concept") {
            return Ok(self.expansion_reply(concept));
        }
        if let Some(concept) = self.validation.capture(prompt, "concept") {
            return Ok(self.validation_reply(concept));
        }
        if let Some(concept) = self.caption.capture(prompt, "concept") {
            return Ok(self.caption_reply(concept, request.seed));
        }
        if self.generation.matches(prompt) {
            let domain = self
                .generation
                .capture(prompt, "domain_name")
                .unwrap_or("domain");
            return Ok(self.generation_reply(domain, request.seed));
        }
        Err(GatewayError::InvalidRequest(
            "sim chat provider does not recognize the prompt shape".into(),
        ))
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Deterministic unit vector seeded by a list of hash parts.
fn hashed_unit_vector(dim: usize, parts: &[&str]) -> Vec<f32> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stable_seed(parts));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for x in &mut v {
        *x /= norm;
    }
    v.into_iter().map(|x| x as f32).collect()
}

enum EmbedMode {
    /// Item text hashes straight to a unit vector.
    Hashed,
    /// Items land in one of `clusters` buckets by hash; members of a
    /// bucket share a base vector plus per-item jitter, giving the
    /// high intra-bucket cosine that dedup and leak filtering need.
    Clustered { clusters: u64, jitter: f64 },
}

/// Offline embedder: identical input always yields the identical vector.
pub struct SimEmbedProvider {
    model: String,
    dim: usize,
    mode: EmbedMode,
    calls: AtomicU64,
}

impl SimEmbedProvider {
    pub fn hashed(model: impl Into<String>, dim: usize) -> Self {
        SimEmbedProvider {
            model: model.into(),
            dim,
            mode: EmbedMode::Hashed,
            calls: AtomicU64::new(0),
        }
    }

    pub fn clustered(model: impl Into<String>, dim: usize, clusters: u64, jitter: f64) -> Self {
        SimEmbedProvider {
            model: model.into(),
            dim,
            mode: EmbedMode::Clustered { clusters, jitter },
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn vector_for(&self, item: &str) -> Vec<f32> {
        match self.mode {
            EmbedMode::Hashed => hashed_unit_vector(self.dim, &["embed", &self.model, item]),
            EmbedMode::Clustered { clusters, jitter } => {
                let bucket = stable_seed(&["bucket", item]) % clusters;
                let base = hashed_unit_vector(self.dim, &["cluster", &bucket.to_string()]);
                let noise = hashed_unit_vector(self.dim, &["jitter", item]);
                base.iter()
                    .zip(&noise)
                    .map(|(&b, &n)| b + (jitter as f32) * n)
                    .collect()
            }
        }
    }
}

impl EmbedProvider for SimEmbedProvider {
    fn embed(&self, items: &[String]) -> Result<Vec<EmbedItem>, GatewayError> {
        if items.is_empty() {
            return Err(GatewayError::InvalidRequest("no items".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(items.iter().map(|item| Ok(self.vector_for(item))).collect())
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Offline image generator: URIs derived from (prompt, seed, index).
pub struct SimImageGenProvider {
    calls: AtomicU64,
}

impl SimImageGenProvider {
    pub fn new() -> Self {
        SimImageGenProvider {
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for SimImageGenProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ImageGenProvider for SimImageGenProvider {
    fn generate(
        &self,
        prompt: &str,
        n: usize,
        seed: i64,
    ) -> Result<GeneratedImages, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be positive".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let uris = (0..n)
            .map(|i| {
                format!(
                    "mock://img/{}",
                    stable_id(&[prompt, &seed.to_string(), &i.to_string()])
                )
            })
            .collect();
        Ok(GeneratedImages { uris, failed: 0 })
    }
}

/// Offline OOD probability source.
///
/// Each image gets a hashed "domain fit" in (0,1); concept probabilities
/// are a softmax sharpened by that fit and `p_no` entries rise as the
/// fit falls, so OOD scores spread over (0,1) deterministically. A
/// quarter of images (by hash) carry detected text and get blurred-
/// variant rows under a different salt.
pub struct SimOodProbProvider {
    calls: AtomicU64,
}

impl SimOodProbProvider {
    pub fn new() -> Self {
        SimOodProbProvider {
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn has_text(uri: &str) -> bool {
        stable_seed(&["text-detect", uri]) % 4 == 0
    }

    fn unit_hash(parts: &[&str]) -> f64 {
        (stable_seed(parts) % 1_000_000) as f64 / 1_000_000.0
    }

    fn row(&self, uri: &str, concepts: &[String], salt: &str) -> OODProbRow {
        let fit = Self::unit_hash(&["fit", uri, salt]);
        let logits: Vec<f64> = concepts
            .iter()
            .map(|c| 8.0 * fit * Self::unit_hash(&["logit", uri, c, salt]))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let p_no: Vec<f64> = concepts
            .iter()
            .map(|c| {
                ((1.0 - fit) * 0.8 + 0.4 * Self::unit_hash(&["no", uri, c, salt])).clamp(0.0, 1.0)
            })
            .collect();
        OODProbRow {
            image_id: uri.to_string(),
            p,
            p_no,
        }
    }
}

impl Default for SimOodProbProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl OodProbProvider for SimOodProbProvider {
    fn probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError> {
        if concepts.is_empty() {
            return Err(GatewayError::InvalidRequest("empty concept list".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(image_uris
            .iter()
            .map(|uri| self.row(uri, concepts, "plain"))
            .collect())
    }

    fn blurred_probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError> {
        if concepts.is_empty() {
            return Err(GatewayError::InvalidRequest("empty concept list".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(image_uris
            .iter()
            .filter(|uri| Self::has_text(uri))
            .map(|uri| self.row(uri, concepts, "blurred"))
            .collect())
    }
}

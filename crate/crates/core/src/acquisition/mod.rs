//! Candidate pool assembly: per-concept retrieval from a real-image
//! embedding index, caption sampling, synthesis jobs, and the merged
//! record manifest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{render, Concept, DomainSpec};
use crate::gateway::{
    embed_batch, ChatMessage, ChatProvider, ChatRequest, EmbedProvider, GatewayError,
    ImageGenProvider,
};
use crate::index::{top_k, EmbeddingStore, IndexError};
use crate::par;
use crate::util::{stable_id, stable_seed};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("image store is empty")]
    EmptyStore,
    #[error("store model tag '{store}' does not match embedder '{embedder}'")]
    ModelTagMismatch { store: String, embedder: String },
    #[error("record id collision on '{0}'")]
    IdCollision(String),
    #[error("no usable captions for concept '{0}'")]
    EmptyCaptions(String),
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Real,
    Synthetic,
}

/// One candidate image. Ids are content hashes — `(source, uri)` for
/// real images, `(source, prompt, seed, index)` for synthetic — so
/// re-execution with the same inputs reproduces the same ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub uri: String,
    pub source: ImageSource,
    pub concept_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_similarity: Option<f64>,
}

impl ImageRecord {
    pub fn real(uri: &str, concept_id: &str, similarity: f64) -> Self {
        ImageRecord {
            id: stable_id(&["real", uri]),
            uri: uri.to_string(),
            source: ImageSource::Real,
            concept_id: concept_id.to_string(),
            caption: None,
            retrieval_similarity: Some(similarity),
        }
    }

    pub fn synthetic(uri: &str, concept_id: &str, caption: &str, seed: i64, index: usize) -> Self {
        ImageRecord {
            id: stable_id(&["synthetic", caption, &seed.to_string(), &index.to_string()]),
            uri: uri.to_string(),
            source: ImageSource::Synthetic,
            concept_id: concept_id.to_string(),
            caption: Some(caption.to_string()),
            retrieval_similarity: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.source {
            ImageSource::Synthetic if self.caption.is_none() => {
                Err(format!("synthetic record '{}' lacks a caption", self.id))
            }
            ImageSource::Real => match self.retrieval_similarity {
                Some(s) if (-1.0..=1.0).contains(&s) => Ok(()),
                Some(s) => Err(format!("record '{}' similarity {s} outside [-1,1]", self.id)),
                None => Err(format!("real record '{}' lacks a similarity", self.id)),
            },
            _ => Ok(()),
        }
    }
}

/// Captions sampled for one concept, with the chat seeds that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub concept_id: String,
    pub concept_key: String,
    pub captions: Vec<String>,
    pub seeds: Vec<i64>,
}

fn default_per_concept_real() -> usize {
    500
}
fn default_n_cap() -> usize {
    5
}
fn default_n_synth() -> usize {
    35
}
fn default_caption_template() -> String {
    DEFAULT_CAPTION_TEMPLATE.to_string()
}

pub const DEFAULT_CAPTION_TEMPLATE: &str = "Write one concise, vivid caption for a photograph \
of \"{concept}\" — a {domain_description} from the domain \"{domain_name}\". Describe a \
concrete scene around it. Output only the caption.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    #[serde(default = "default_per_concept_real")]
    pub per_concept_real: usize,
    #[serde(default = "default_n_cap")]
    pub n_cap: usize,
    #[serde(default = "default_n_synth")]
    pub n_synth: usize,
    #[serde(default = "default_caption_template")]
    pub caption_template: String,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            per_concept_real: default_per_concept_real(),
            n_cap: default_n_cap(),
            n_synth: default_n_synth(),
            caption_template: default_caption_template(),
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.per_concept_real == 0 || self.n_cap == 0 || self.n_synth == 0 {
            return Err("per_concept_real, n_cap, n_synth must all be >= 1".into());
        }
        Ok(())
    }
}

/// Retrieve the top `per_concept_real` store images for one concept by
/// embedding its text and running exact top-k in the joint space.
pub fn retrieve_for_concept(
    concept: &Concept,
    text_embedder: &dyn EmbedProvider,
    image_store: &EmbeddingStore,
    config: &AcquisitionConfig,
) -> Result<Vec<ImageRecord>, AcquisitionError> {
    if image_store.is_empty() {
        return Err(AcquisitionError::EmptyStore);
    }
    if image_store.model_tag() != text_embedder.model_name() {
        return Err(AcquisitionError::ModelTagMismatch {
            store: image_store.model_tag().to_string(),
            embedder: text_embedder.model_name().to_string(),
        });
    }
    let embedded = embed_batch(text_embedder, &[concept.text.clone()], 1)?;
    let vector = embedded
        .into_iter()
        .next()
        .unwrap()
        .map_err(|m| GatewayError::InvalidResponse(m))?;
    let neighbors = top_k(image_store, &vector, config.per_concept_real, None)?;
    Ok(neighbors
        .neighbors
        .into_iter()
        .map(|n| ImageRecord::real(&n.id, &concept.id, n.similarity))
        .collect())
}

/// Pool-level retrieval over many concepts. Images retrieved for more
/// than one concept are kept once, linked to the highest-similarity
/// concept (ties to the lower concept id). Concepts whose embedding or
/// search fails are skipped with a warning.
pub fn retrieve_for_concepts(
    concepts: &[Concept],
    text_embedder: &dyn EmbedProvider,
    image_store: &EmbeddingStore,
    config: &AcquisitionConfig,
) -> Result<(Vec<ImageRecord>, usize), AcquisitionError> {
    let results: Vec<Result<Vec<ImageRecord>, AcquisitionError>> = par::map_slice(concepts, |c| {
        retrieve_for_concept(c, text_embedder, image_store, config)
    });

    let mut by_uri: std::collections::HashMap<String, ImageRecord> = Default::default();
    let mut skipped = 0usize;
    for (concept, result) in concepts.iter().zip(results) {
        match result {
            Ok(records) => {
                for record in records {
                    match by_uri.entry(record.uri.clone()) {
                        std::collections::hash_map::Entry::Vacant(slot) => {
                            slot.insert(record);
                        }
                        std::collections::hash_map::Entry::Occupied(mut slot) => {
                            let held = slot.get();
                            let new_sim = record.retrieval_similarity.unwrap_or(-1.0);
                            let held_sim = held.retrieval_similarity.unwrap_or(-1.0);
                            if new_sim > held_sim
                                || (new_sim == held_sim && record.concept_id < held.concept_id)
                            {
                                slot.insert(record);
                            }
                        }
                    }
                }
            }
            Err(AcquisitionError::EmptyStore) => return Err(AcquisitionError::EmptyStore),
            Err(e @ AcquisitionError::ModelTagMismatch { .. }) => return Err(e),
            Err(error) => {
                skipped += 1;
                log::warn!("retrieval skipped concept '{}': {error}", concept.text);
            }
        }
    }

    let mut records: Vec<ImageRecord> = by_uri.into_values().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((records, skipped))
}

/// Chat seed for caption `index` of a concept.
pub fn caption_seed(concept_key: &str, index: usize) -> i64 {
    stable_seed(&["caption-seed", concept_key, &index.to_string()]) as i64
}

/// Image-generation seed for caption `index` of a concept.
pub fn synthesis_seed(concept_key: &str, index: usize) -> i64 {
    stable_seed(&["synth-seed", concept_key, &index.to_string()]) as i64
}

const CAPTION_TEMPERATURE: f64 = 1.0;
const CAPTION_RETRY_BUMP: i64 = 1_000_003;

/// Sample `n_cap` captions for a concept with distinct seeds. An empty
/// or duplicate caption is re-sampled once at a bumped seed and then
/// accepted as-is (duplicates allowed; still-empty samples dropped).
pub fn generate_captions(
    concept: &Concept,
    domain: &DomainSpec,
    chat: &dyn ChatProvider,
    config: &AcquisitionConfig,
) -> Result<CaptionSet, AcquisitionError> {
    let prompt = render(&config.caption_template, domain, Some(&concept.text));
    let sample = |seed: i64| -> Result<String, AcquisitionError> {
        let request = ChatRequest {
            messages: vec![ChatMessage::user(prompt.clone())],
            temperature: CAPTION_TEMPERATURE,
            seed,
        };
        Ok(chat.chat(&request)?.trim().to_string())
    };

    let mut captions = Vec::with_capacity(config.n_cap);
    let mut seeds = Vec::with_capacity(config.n_cap);
    for index in 0..config.n_cap {
        let seed = caption_seed(&concept.key, index);
        let mut caption = sample(seed)?;
        let mut used_seed = seed;
        if caption.is_empty() || captions.contains(&caption) {
            used_seed = seed.wrapping_add(CAPTION_RETRY_BUMP);
            caption = sample(used_seed)?;
        }
        if caption.is_empty() {
            log::warn!(
                "empty caption for '{}' after retry, dropping slot {index}",
                concept.text
            );
            continue;
        }
        captions.push(caption);
        seeds.push(used_seed);
    }
    if captions.is_empty() {
        return Err(AcquisitionError::EmptyCaptions(concept.text.clone()));
    }
    Ok(CaptionSet {
        concept_id: concept.id.clone(),
        concept_key: concept.key.clone(),
        captions,
        seeds,
    })
}

/// Caption every accepted concept, skipping failures with a warning.
pub fn generate_caption_sets(
    concepts: &[Concept],
    domain: &DomainSpec,
    chat: &dyn ChatProvider,
    config: &AcquisitionConfig,
) -> Result<(Vec<CaptionSet>, usize), AcquisitionError> {
    let results: Vec<Result<CaptionSet, AcquisitionError>> =
        par::map_slice(concepts, |c| generate_captions(c, domain, chat, config));
    let mut sets = Vec::with_capacity(concepts.len());
    let mut skipped = 0usize;
    for (concept, result) in concepts.iter().zip(results) {
        match result {
            Ok(set) => sets.push(set),
            Err(error) => {
                skipped += 1;
                log::warn!("captioning skipped concept '{}': {error}", concept.text);
            }
        }
    }
    Ok((sets, skipped))
}

/// Run the synthesis jobs for one caption set: `n_synth` images per
/// caption, seeded per (concept key, caption index). Partial output is
/// tolerated; a concept ending up with zero images stays in the pool on
/// the strength of its real images.
pub fn synthesize_for_captions(
    caption_set: &CaptionSet,
    image_gen: &dyn ImageGenProvider,
    config: &AcquisitionConfig,
) -> Result<(Vec<ImageRecord>, usize), AcquisitionError> {
    let mut records = Vec::with_capacity(caption_set.captions.len() * config.n_synth);
    let mut failed = 0usize;
    for (index, caption) in caption_set.captions.iter().enumerate() {
        let seed = synthesis_seed(&caption_set.concept_key, index);
        match image_gen.generate(caption, config.n_synth, seed) {
            Ok(generated) => {
                failed += generated.failed;
                for (i, uri) in generated.uris.iter().enumerate() {
                    records.push(ImageRecord::synthetic(
                        uri,
                        &caption_set.concept_id,
                        caption,
                        seed,
                        i,
                    ));
                }
            }
            Err(error) => {
                failed += config.n_synth;
                log::warn!(
                    "synthesis failed for caption {index} of concept {}: {error}",
                    caption_set.concept_id
                );
            }
        }
    }
    if records.is_empty() {
        log::warn!(
            "no synthetic images for concept {}; real retrievals may still cover it",
            caption_set.concept_id
        );
    }
    Ok((records, failed))
}

/// Synthesis over all caption sets, in caption-set order.
pub fn synthesize_all(
    caption_sets: &[CaptionSet],
    image_gen: &dyn ImageGenProvider,
    config: &AcquisitionConfig,
) -> Result<(Vec<ImageRecord>, usize), AcquisitionError> {
    let results: Vec<Result<(Vec<ImageRecord>, usize), AcquisitionError>> =
        par::map_slice(caption_sets, |set| {
            synthesize_for_captions(set, image_gen, config)
        });
    let mut records = Vec::new();
    let mut failed = 0usize;
    for result in results {
        let (part, part_failed) = result?;
        records.extend(part);
        failed += part_failed;
    }
    Ok((records, failed))
}

/// Concatenate the pools — real block first, then synthetic, each
/// sorted by id — enforcing global id uniqueness.
pub fn merge_pools(
    real: &[ImageRecord],
    synth: &[ImageRecord],
) -> Result<Vec<ImageRecord>, AcquisitionError> {
    let mut real: Vec<ImageRecord> = real.to_vec();
    let mut synth: Vec<ImageRecord> = synth.to_vec();
    real.sort_by(|a, b| a.id.cmp(&b.id));
    synth.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = std::collections::HashSet::with_capacity(real.len() + synth.len());
    let mut merged = Vec::with_capacity(real.len() + synth.len());
    for record in real.into_iter().chain(synth) {
        if !seen.insert(record.id.clone()) {
            return Err(AcquisitionError::IdCollision(record.id));
        }
        merged.push(record);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{canonicalize_concept, ConceptOrigin};
    use crate::gateway::{GeneratedImages, SimEmbedProvider, SimImageGenProvider};
    use crate::index::build_store;

    fn concept(text: &str) -> Concept {
        Concept::new(
            canonicalize_concept(text).unwrap(),
            ConceptOrigin::Generated,
            None,
            0,
        )
    }

    fn domain() -> DomainSpec {
        DomainSpec::new("food", "dish").unwrap()
    }

    fn small_config(per_concept: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            per_concept_real: per_concept,
            n_cap: 2,
            n_synth: 3,
            ..AcquisitionConfig::default()
        }
    }

    #[test]
    fn planted_vectors_occupy_top_ranks() {
        let embedder = SimEmbedProvider::hashed("joint-mock", 32);
        let c = concept("paella");
        let target = embedder.vector_for("paella");

        // Ten images; three planted collinear with the concept vector.
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for i in 0..7 {
            ids.push(format!("http://img/noise{i}"));
            rows.push(embedder.vector_for(&format!("noise-{i}")));
        }
        for i in 0..3 {
            ids.push(format!("http://img/planted{i}"));
            let scale = 1.0 + i as f32 * 0.5;
            rows.push(target.iter().map(|&x| x * scale).collect());
        }
        let store = build_store(ids, rows, "joint-mock").unwrap();

        let records =
            retrieve_for_concept(&c, &embedder, &store, &small_config(5)).unwrap();
        assert_eq!(records.len(), 5);
        let top3: Vec<&str> = records[..3].iter().map(|r| r.uri.as_str()).collect();
        assert!(top3.iter().all(|u| u.contains("planted")), "{top3:?}");
        for r in &records {
            r.validate().unwrap();
        }
        // Similarities non-increasing in rank.
        for w in records.windows(2) {
            assert!(
                w[0].retrieval_similarity.unwrap() >= w[1].retrieval_similarity.unwrap()
            );
        }
    }

    #[test]
    fn model_tag_mismatch_is_rejected() {
        let embedder = SimEmbedProvider::hashed("joint-mock", 8);
        let store = build_store(
            vec!["a".into()],
            vec![embedder.vector_for("a")],
            "other-encoder",
        )
        .unwrap();
        assert!(matches!(
            retrieve_for_concept(&concept("x"), &embedder, &store, &small_config(1)),
            Err(AcquisitionError::ModelTagMismatch { .. })
        ));
    }

    #[test]
    fn cross_concept_duplicates_collapse_to_strongest_link() {
        let embedder = SimEmbedProvider::hashed("joint-mock", 16);
        let a = concept("crow");
        let b = concept("raven");
        // One shared image exactly equal to crow's embedding, one filler.
        let store = build_store(
            vec!["http://img/shared".into(), "http://img/other".into()],
            vec![embedder.vector_for("crow"), embedder.vector_for("elsewhere")],
            "joint-mock",
        )
        .unwrap();
        let (records, skipped) = retrieve_for_concepts(
            &[a.clone(), b.clone()],
            &embedder,
            &store,
            &small_config(2),
        )
        .unwrap();
        assert_eq!(skipped, 0);
        let shared = records
            .iter()
            .find(|r| r.uri == "http://img/shared")
            .unwrap();
        assert_eq!(shared.concept_id, a.id, "higher-similarity concept wins");
        // Each uri appears once.
        let uris: std::collections::HashSet<_> = records.iter().map(|r| &r.uri).collect();
        assert_eq!(uris.len(), records.len());
    }

    #[test]
    fn duplicate_retrieval_tie_prefers_lower_concept_id() {
        struct ConstantEmbed;
        impl EmbedProvider for ConstantEmbed {
            fn embed(&self, items: &[String]) -> Result<Vec<crate::gateway::EmbedItem>, GatewayError> {
                Ok(items.iter().map(|_| Ok(vec![1.0f32, 0.0])).collect())
            }
            fn model_name(&self) -> &str {
                "const"
            }
        }
        let a = concept("alpha");
        let b = concept("beta");
        let store = build_store(vec!["http://img/x".into()], vec![vec![1.0, 0.0]], "const").unwrap();
        let (records, _) =
            retrieve_for_concepts(&[a.clone(), b.clone()], &ConstantEmbed, &store, &small_config(1))
                .unwrap();
        assert_eq!(records.len(), 1);
        let expected = a.id.min(b.id);
        assert_eq!(records[0].concept_id, expected);
    }

    #[test]
    fn scripted_captions_round_trip() {
        struct FixedChat;
        impl ChatProvider for FixedChat {
            fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
                Ok(format!("Caption for seed {}", request.seed))
            }
            fn model_name(&self) -> &str {
                "caption"
            }
        }
        let c = concept("canada goose");
        let set = generate_captions(&c, &domain(), &FixedChat, &small_config(1)).unwrap();
        assert_eq!(set.captions.len(), 2);
        assert_eq!(set.seeds.len(), 2);
        assert_ne!(set.seeds[0], set.seeds[1]);
        assert_eq!(set.captions[0], format!("Caption for seed {}", set.seeds[0]));
    }

    #[test]
    fn empty_then_duplicate_captions_follow_retry_rule() {
        use std::sync::atomic::{AtomicU64, Ordering};
        struct MoodyChat {
            calls: AtomicU64,
        }
        impl ChatProvider for MoodyChat {
            fn chat(&self, _request: &ChatRequest) -> Result<String, GatewayError> {
                let n = self.calls.fetch_add(1, Ordering::SeqCst);
                // First slot: empty then empty (dropped). Second slot:
                // a caption. Third: duplicate then duplicate (kept).
                Ok(match n {
                    0 | 1 => "",
                    2 => "same text",
                    _ => "same text",
                }
                .to_string())
            }
            fn model_name(&self) -> &str {
                "moody"
            }
        }
        let c = concept("dish");
        let config = AcquisitionConfig {
            n_cap: 3,
            ..small_config(1)
        };
        let set = generate_captions(&c, &domain(), &MoodyChat { calls: AtomicU64::new(0) }, &config)
            .unwrap();
        assert_eq!(set.captions, vec!["same text", "same text"]);
    }

    #[test]
    fn synthesis_counts_and_stable_ids() {
        let gen = SimImageGenProvider::new();
        let c = concept("paella");
        let set = CaptionSet {
            concept_id: c.id.clone(),
            concept_key: c.key.clone(),
            captions: vec!["a pan of paella".into()],
            seeds: vec![1],
        };
        let config = small_config(1);
        let (first, failed) = synthesize_for_captions(&set, &gen, &config).unwrap();
        let (second, _) = synthesize_for_captions(&set, &gen, &config).unwrap();
        assert_eq!(failed, 0);
        assert_eq!(first.len(), 3);
        assert_eq!(first, second, "ids and uris stable across re-runs");
        for r in &first {
            r.validate().unwrap();
            assert_eq!(r.caption.as_deref(), Some("a pan of paella"));
        }
    }

    #[test]
    fn synthesis_counting_across_concepts() {
        let gen = SimImageGenProvider::new();
        let config = AcquisitionConfig {
            n_cap: 2,
            n_synth: 4,
            ..small_config(1)
        };
        let sets: Vec<CaptionSet> = (0..10)
            .map(|i| {
                let c = concept(&format!("dish {i}"));
                CaptionSet {
                    concept_id: c.id.clone(),
                    concept_key: c.key.clone(),
                    captions: vec![format!("caption a {i}"), format!("caption b {i}")],
                    seeds: vec![0, 1],
                }
            })
            .collect();
        let (records, failed) = synthesize_all(&sets, &gen, &config).unwrap();
        assert_eq!(records.len(), 80);
        assert_eq!(failed, 0);
    }

    #[test]
    fn partial_generation_is_tolerated() {
        struct FlakyGen;
        impl ImageGenProvider for FlakyGen {
            fn generate(
                &self,
                prompt: &str,
                n: usize,
                seed: i64,
            ) -> Result<GeneratedImages, GatewayError> {
                Ok(GeneratedImages {
                    uris: (0..n / 2)
                        .map(|i| format!("mock://img/{}", stable_id(&[prompt, &seed.to_string(), &i.to_string()])))
                        .collect(),
                    failed: n - n / 2,
                })
            }
        }
        let c = concept("soup");
        let set = CaptionSet {
            concept_id: c.id.clone(),
            concept_key: c.key,
            captions: vec!["soup".into()],
            seeds: vec![0],
        };
        let (records, failed) =
            synthesize_for_captions(&set, &FlakyGen, &small_config(1)).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(failed, 2);
    }

    #[test]
    fn merge_keeps_real_block_first() {
        let real = vec![
            ImageRecord::real("http://img/b", "c1", 0.5),
            ImageRecord::real("http://img/a", "c1", 0.6),
        ];
        let synth = vec![
            ImageRecord::synthetic("mock://img/1", "c1", "cap", 1, 0),
            ImageRecord::synthetic("mock://img/2", "c1", "cap", 1, 1),
            ImageRecord::synthetic("mock://img/3", "c1", "cap", 1, 2),
        ];
        let merged = merge_pools(&real, &synth).unwrap();
        assert_eq!(merged.len(), 5);
        assert!(merged[..2].iter().all(|r| r.source == ImageSource::Real));
        assert!(merged[2..].iter().all(|r| r.source == ImageSource::Synthetic));
        assert!(merged[0].id < merged[1].id);
    }

    #[test]
    fn merge_of_empty_real_is_identity_on_synth() {
        let synth = vec![ImageRecord::synthetic("mock://img/1", "c1", "cap", 1, 0)];
        let merged = merge_pools(&[], &synth).unwrap();
        assert_eq!(merged, synth);
    }

    #[test]
    fn forced_id_collision_is_an_integrity_error() {
        let a = ImageRecord::real("http://img/a", "c1", 0.5);
        let mut b = ImageRecord::synthetic("mock://img/b", "c1", "cap", 1, 0);
        b.id = a.id.clone();
        assert!(matches!(
            merge_pools(&[a], &[b]),
            Err(AcquisitionError::IdCollision(_))
        ));
    }
}

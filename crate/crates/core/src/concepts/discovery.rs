//! The three discovery operations: seeded generation rounds, expansion
//! rounds over the growing bank, and cross-model validation.
//!
//! Generation rounds are sequential (each depends on the accumulated
//! set). Within an expansion or validation round the per-concept calls
//! run in parallel, and results merge in a fixed order (by concept key)
//! so the outcome is identical at any parallelism degree.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    canonicalize_concept, BankPhase, Concept, ConceptBank, ConceptOrigin, DiscoveryConfig,
    DiscoveryError, DomainSpec, Validation,
};
use crate::gateway::{parse_concept_list, ChatMessage, ChatProvider, ChatRequest, Verdict};
use crate::par;
use crate::util::stable_seed;

/// Conversation transcript of the generation stage, reused as context
/// for expansion calls.
pub type Transcript = Vec<ChatMessage>;

const SYSTEM_PROMPT: &str =
    "You are a precise assistant helping to assemble visual dataset concept lists.";

/// Exchange turns of history kept when replaying the generation
/// transcript into expansion calls (beyond the system message).
const HISTORY_TURNS: usize = 20;

const GENERATION_TEMPERATURE: f64 = 1.0;
const VALIDATION_TEMPERATURE: f64 = 0.0;

/// Build the initial bank by sampling the generation prompt with seed
/// `base_seed + round` until a round's new canonical concepts fall
/// below `lambda1` times the accumulated size (strict), or the round
/// cap is hit.
pub fn generate_initial_concepts(
    domain: &DomainSpec,
    provider: &dyn ChatProvider,
    config: &DiscoveryConfig,
) -> Result<(ConceptBank, Transcript), DiscoveryError> {
    domain.validate()?;
    config.validate()?;

    let prompt = config.render_generation_prompt(domain);
    let mut transcript: Transcript = vec![ChatMessage::system(SYSTEM_PROMPT)];
    let mut concepts: Vec<Concept> = Vec::new();
    let mut keys: HashSet<String> = HashSet::new();

    for round in 1..=config.max_generation_rounds {
        let request = ChatRequest {
            messages: vec![
                ChatMessage::system(SYSTEM_PROMPT),
                ChatMessage::user(prompt.clone()),
            ],
            temperature: GENERATION_TEMPERATURE,
            seed: config.base_seed.wrapping_add(round as i64),
        };
        let reply = provider.chat(&request)?;
        transcript.push(ChatMessage::user(prompt.clone()));
        transcript.push(ChatMessage::assistant(reply.clone()));

        let prev_size = concepts.len();
        for raw in parse_concept_list(&reply) {
            let Some(canonical) = canonicalize_concept(&raw) else {
                continue;
            };
            if keys.insert(canonical.key.clone()) {
                concepts.push(Concept::new(canonical, ConceptOrigin::Generated, None, round - 1));
            }
        }
        let gain = concepts.len() - prev_size;

        if round == 1 && concepts.is_empty() {
            return Err(DiscoveryError::EmptyDomain);
        }
        if (gain as f64) < config.lambda1 * prev_size as f64 {
            break;
        }
    }

    Ok((
        ConceptBank {
            domain: domain.clone(),
            concepts,
            phase: BankPhase::Initial,
        },
        transcript,
    ))
}

/// Truncate a generation transcript to the system message plus the most
/// recent `HISTORY_TURNS` user/assistant pairs.
fn truncate_history(history: &[ChatMessage]) -> Vec<ChatMessage> {
    let (system, rest): (Vec<_>, Vec<_>) = history
        .iter()
        .cloned()
        .partition(|m| m.role == crate::gateway::Role::System);
    let keep = HISTORY_TURNS * 2;
    let tail = if rest.len() > keep {
        rest[rest.len() - keep..].to_vec()
    } else {
        rest
    };
    let mut out = Vec::with_capacity(tail.len() + 1);
    out.push(
        system
            .into_iter()
            .next()
            .unwrap_or_else(|| ChatMessage::system(SYSTEM_PROMPT)),
    );
    out.extend(tail);
    out
}

/// Expansion seed for one concept key.
pub fn expansion_seed(base_seed: i64, concept_key: &str) -> i64 {
    base_seed.wrapping_add(stable_seed(&[concept_key]) as i64)
}

/// Grow the bank by asking for concepts similar to each member, round
/// by round, until gains fall below `lambda2` times the bank size.
///
/// Every expansion call replays the (truncated) generation transcript
/// as prior context. Replies are memoized per concept: the seed is a
/// pure function of the concept key, so a second call could only repeat
/// the first answer.
pub fn expand_concepts(
    bank: &ConceptBank,
    provider: &dyn ChatProvider,
    config: &DiscoveryConfig,
    history: &[ChatMessage],
) -> Result<ConceptBank, DiscoveryError> {
    if bank.phase != BankPhase::Initial {
        return Err(DiscoveryError::WrongPhase {
            expected: BankPhase::Initial,
            found: bank.phase,
        });
    }
    config.validate()?;

    let context = truncate_history(history);
    let mut concepts = bank.concepts.clone();
    let mut keys: HashSet<String> = concepts.iter().map(|c| c.key.clone()).collect();
    let mut memo: HashMap<String, Vec<String>> = HashMap::new();

    for round in 1..=config.max_expansion_rounds {
        let prev_size = concepts.len();

        // Parents in key order; only uncached ones cost a provider call.
        let mut parents: Vec<(String, String, String)> = concepts
            .iter()
            .map(|c| (c.key.clone(), c.text.clone(), c.id.clone()))
            .collect();
        parents.sort_by(|a, b| a.0.cmp(&b.0));
        let pending: Vec<&(String, String, String)> =
            parents.iter().filter(|(key, _, _)| !memo.contains_key(key)).collect();

        let replies: Vec<(String, Result<Vec<String>, String>)> =
            par::map_slice(&pending, |(key, text, _)| {
                let mut messages = context.clone();
                messages.push(ChatMessage::user(
                    config.render_expansion_prompt(&bank.domain, text),
                ));
                let request = ChatRequest {
                    messages,
                    temperature: GENERATION_TEMPERATURE,
                    seed: expansion_seed(config.base_seed, key),
                };
                let outcome = provider
                    .chat(&request)
                    .map(|reply| parse_concept_list(&reply))
                    .map_err(|e| e.to_string());
                (key.clone(), outcome)
            });

        let attempted = replies.len();
        let mut failures = 0usize;
        for (key, outcome) in replies {
            match outcome {
                Ok(list) => {
                    memo.insert(key, list);
                }
                Err(message) => {
                    failures += 1;
                    log::warn!("expansion of '{key}' failed, skipping this round: {message}");
                }
            }
        }
        if attempted > 0 && failures == attempted {
            return Err(DiscoveryError::Stage(format!(
                "all {attempted} expansion calls failed in round {round}"
            )));
        }

        for (key, _, parent_id) in &parents {
            let Some(list) = memo.get(key) else { continue };
            for raw in list {
                let Some(canonical) = canonicalize_concept(raw) else {
                    continue;
                };
                if keys.insert(canonical.key.clone()) {
                    concepts.push(Concept::new(
                        canonical,
                        ConceptOrigin::Expanded,
                        Some(parent_id.clone()),
                        round - 1,
                    ));
                }
            }
        }

        let gain = concepts.len() - prev_size;
        if (gain as f64) < config.lambda2 * prev_size as f64 {
            break;
        }
    }

    Ok(ConceptBank {
        domain: bank.domain.clone(),
        concepts,
        phase: BankPhase::Expanded,
    })
}

/// Validation tally, reported alongside the validated bank.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections forced by an undecidable reply after one retry.
    pub unparseable: usize,
    /// Rejections forced by provider failures.
    pub provider_failures: usize,
}

/// Judge every concept with the validation prompt at a single fixed
/// seed. Rejected concepts stay in the bank for auditability; an
/// unparseable verdict (after one retry at a bumped seed) counts as
/// rejection.
pub fn validate_concepts(
    bank: &ConceptBank,
    provider: &dyn ChatProvider,
    config: &DiscoveryConfig,
) -> Result<(ConceptBank, ValidationStats), DiscoveryError> {
    if bank.phase != BankPhase::Expanded {
        return Err(DiscoveryError::WrongPhase {
            expected: BankPhase::Expanded,
            found: bank.phase,
        });
    }
    config.validate()?;

    enum Outcome {
        Decided(bool),
        Unparseable,
        Failed(String),
    }

    let judge = |concept: &Concept, seed: i64| -> Result<Verdict, String> {
        let request = ChatRequest {
            messages: vec![
                ChatMessage::system(SYSTEM_PROMPT),
                ChatMessage::user(config.render_validation_prompt(&bank.domain, &concept.text)),
            ],
            temperature: VALIDATION_TEMPERATURE,
            seed,
        };
        provider
            .chat(&request)
            .map(|reply| crate::gateway::parse_bool_verdict(&reply))
            .map_err(|e| e.to_string())
    };

    let outcomes: Vec<Outcome> = par::map_slice(&bank.concepts, |concept| {
        match judge(concept, config.base_seed) {
            Ok(Verdict::Unparseable) => match judge(concept, config.base_seed.wrapping_add(1)) {
                Ok(verdict) => verdict
                    .as_bool()
                    .map(Outcome::Decided)
                    .unwrap_or(Outcome::Unparseable),
                Err(message) => Outcome::Failed(message),
            },
            Ok(verdict) => Outcome::Decided(verdict.as_bool().unwrap()),
            Err(message) => Outcome::Failed(message),
        }
    });

    let mut stats = ValidationStats::default();
    let mut concepts = bank.concepts.clone();
    let mut hard_failures = 0usize;
    for (concept, outcome) in concepts.iter_mut().zip(outcomes) {
        concept.validated = match outcome {
            Outcome::Decided(true) => {
                stats.accepted += 1;
                Validation::Accepted
            }
            Outcome::Decided(false) => {
                stats.rejected += 1;
                Validation::Rejected
            }
            Outcome::Unparseable => {
                stats.rejected += 1;
                stats.unparseable += 1;
                log::warn!("unparseable verdict for '{}', rejecting", concept.text);
                Validation::Rejected
            }
            Outcome::Failed(message) => {
                hard_failures += 1;
                stats.rejected += 1;
                stats.provider_failures += 1;
                log::warn!("validator failed for '{}', rejecting: {message}", concept.text);
                Validation::Rejected
            }
        };
    }
    if !concepts.is_empty() && hard_failures == concepts.len() {
        return Err(DiscoveryError::Stage(format!(
            "validator failed for all {} concepts",
            concepts.len()
        )));
    }

    Ok((
        ConceptBank {
            domain: bank.domain.clone(),
            concepts,
            phase: BankPhase::Validated,
        },
        stats,
    ))
}

//! Uniform access to external chat, embedding, image-generation, and
//! OOD-probability services over a small wire protocol, plus
//! deterministic in-process mocks for offline runs.
//!
//! Chat and embeddings speak the OpenAI-compatible JSON protocol
//! (`POST {base}/v1/chat/completions`, `POST {base}/v1/embeddings`).
//! Image generation posts `{prompt, n, seed}` to `{base}/generate` and
//! receives `{uris: [...]}`. OOD probabilities post
//! `{image_uris, concepts, blurred}` to `{base}/ood_probs` and receive
//! an array of `{image_id, p, p_no}` rows; with `blurred` set the
//! service scores text-blurred variants and returns rows only for
//! images where text was detected.

mod http;
mod mock;
mod parse;
mod retry;

pub use http::{
    transport_attempts, HttpChatProvider, HttpEmbedProvider, HttpImageGenProvider,
    HttpOodProbProvider,
};
pub use mock::{
    MockScript, ScriptedChatProvider, SimChatProvider, SimEmbedProvider, SimImageGenProvider,
    SimOodProbProvider,
};
pub use parse::{parse_bool_verdict, parse_concept_list, Verdict};
pub(crate) use parse::strip_list_marker;
pub use retry::{run_with_retries, RetryPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error (status {status}): {detail}")]
    Protocol { status: u16, detail: String },
    #[error("mock script has no entry for fingerprint {fingerprint}")]
    ScriptMiss { fingerprint: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// What a configured endpoint serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Chat,
    TextEmbed,
    ImageEmbed,
    ImageGen,
    OodProb,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Chat => "chat",
            ProviderKind::TextEmbed => "text_embed",
            ProviderKind::ImageEmbed => "image_embed",
            ProviderKind::ImageGen => "image_gen",
            ProviderKind::OodProb => "ood_prob",
        }
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_in_flight() -> usize {
    8
}

/// One remote service endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub kind: ProviderKind,
    pub base_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl ProviderEndpoint {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidRequest("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_in_flight must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A seeded chat completion request. The seed pins the sample drawn
/// from the model's output distribution, so identical requests against
/// deterministic providers yield identical text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: i64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages are empty".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Content of the last user message; the mocks key off it.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Per-image zero-shot probabilities over a concept list: `p[c]` that
/// the image contains concept c, `p_no[c]` that it does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OODProbRow {
    pub image_id: String,
    pub p: Vec<f64>,
    pub p_no: Vec<f64>,
}

impl OODProbRow {
    /// Row invariants: equal lengths matching the concept list, all
    /// entries in [0,1], `p` summing to 1 within 1e-6.
    pub fn validate(&self, concept_count: usize) -> Result<(), String> {
        if self.p.len() != concept_count || self.p_no.len() != concept_count {
            return Err(format!(
                "row lengths {}/{} do not match concept count {concept_count}",
                self.p.len(),
                self.p_no.len()
            ));
        }
        for &x in self.p.iter().chain(&self.p_no) {
            if !(0.0..=1.0).contains(&x) {
                return Err(format!("probability {x} outside [0,1]"));
            }
        }
        let sum: f64 = self.p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("p sums to {sum}, expected 1 within 1e-6"));
        }
        Ok(())
    }
}

/// Outcome of image generation; `failed` counts requested images the
/// service could not produce.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImages {
    pub uris: Vec<String>,
    pub failed: usize,
}

/// Per-item embedding result: `Err` carries the service's failure
/// message so the caller can drop the item with a warning.
pub type EmbedItem = Result<Vec<f32>, String>;

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
    /// Model identity, used to keep generator and validator distinct.
    fn model_name(&self) -> &str;
}

pub trait EmbedProvider: Send + Sync {
    fn embed(&self, items: &[String]) -> Result<Vec<EmbedItem>, GatewayError>;
    fn model_name(&self) -> &str;
}

pub trait ImageGenProvider: Send + Sync {
    fn generate(&self, prompt: &str, n: usize, seed: i64)
        -> Result<GeneratedImages, GatewayError>;
}

pub trait OodProbProvider: Send + Sync {
    /// One row per image, over `concepts`, in image order.
    fn probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError>;

    /// Rows for the text-blurred variants, returned only for images in
    /// which the service detected text. Images without text get no row.
    fn blurred_probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError>;
}

/// Embed `items` in chunks of `batch_size`, concatenating results in
/// input order. Chunked and unchunked execution produce identical
/// output. All successful vectors must share one dimension.
pub fn embed_batch(
    provider: &dyn EmbedProvider,
    items: &[String],
    batch_size: usize,
) -> Result<Vec<EmbedItem>, GatewayError> {
    if items.is_empty() {
        return Err(GatewayError::InvalidRequest("no items to embed".into()));
    }
    if batch_size == 0 {
        return Err(GatewayError::InvalidRequest("batch_size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size) {
        let part = provider.embed(chunk)?;
        if part.len() != chunk.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "embedder returned {} results for {} items",
                part.len(),
                chunk.len()
            )));
        }
        out.extend(part);
    }
    let mut dim = None;
    for item in out.iter().flatten() {
        match dim {
            None => dim = Some(item.len()),
            Some(d) if d != item.len() => {
                return Err(GatewayError::Protocol {
                    status: 0,
                    detail: format!(
                        "dimension mismatch across batch: {d} vs {}",
                        item.len()
                    ),
                })
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Fetch OOD probability rows in chunks, validating every row against
/// the invariants; a violating row is a protocol error naming the image.
pub fn ood_probabilities(
    provider: &dyn OodProbProvider,
    image_uris: &[String],
    concepts: &[String],
    batch_size: usize,
) -> Result<Vec<OODProbRow>, GatewayError> {
    if concepts.is_empty() {
        return Err(GatewayError::InvalidRequest("empty concept list".into()));
    }
    if batch_size == 0 {
        return Err(GatewayError::InvalidRequest("batch_size must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(image_uris.len());
    for chunk in image_uris.chunks(batch_size) {
        let part = provider.probabilities(chunk, concepts)?;
        if part.len() != chunk.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "expected {} rows, got {}",
                chunk.len(),
                part.len()
            )));
        }
        rows.extend(part);
    }
    for row in &rows {
        row.validate(concepts.len()).map_err(|msg| GatewayError::Protocol {
            status: 0,
            detail: format!("row for image '{}': {msg}", row.image_id),
        })?;
    }
    Ok(rows)
}

/// Admission control: at most `limit` concurrent holders.
pub(crate) struct AdmissionGate {
    limit: usize,
    state: std::sync::Mutex<usize>,
    cv: std::sync::Condvar,
}

impl AdmissionGate {
    pub(crate) fn new(limit: usize) -> Self {
        AdmissionGate {
            limit: limit.max(1),
            state: std::sync::Mutex::new(0),
            cv: std::sync::Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GatePermit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GatePermit { gate: self }
    }
}

pub(crate) struct GatePermit<'a> {
    gate: &'a AdmissionGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_request_validation() {
        let bad = ChatRequest {
            messages: vec![],
            temperature: 1.0,
            seed: 0,
        };
        assert!(bad.validate().is_err());

        let bad_first = ChatRequest {
            messages: vec![ChatMessage::assistant("hi")],
            temperature: 1.0,
            seed: 0,
        };
        assert!(bad_first.validate().is_err());

        let ok = ChatRequest {
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.0,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn ood_row_invariants() {
        let good = OODProbRow {
            image_id: "i".into(),
            p: vec![0.7, 0.3],
            p_no: vec![0.2, 0.9],
        };
        assert!(good.validate(2).is_ok());

        let bad_sum = OODProbRow {
            image_id: "i".into(),
            p: vec![0.9, 0.6],
            p_no: vec![0.2, 0.9],
        };
        assert!(bad_sum.validate(2).is_err());

        let bad_len = OODProbRow {
            image_id: "i".into(),
            p: vec![1.0],
            p_no: vec![0.2, 0.9],
        };
        assert!(bad_len.validate(2).is_err());
    }

    #[test]
    fn admission_gate_limits_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let gate = Arc::new(AdmissionGate::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gate = gate.clone();
                let peak = peak.clone();
                let current = current.clone();
                std::thread::spawn(move || {
                    let _permit = gate.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}

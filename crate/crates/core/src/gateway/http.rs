//! HTTP-backed providers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    AdmissionGate, ChatProvider, ChatRequest, EmbedItem, EmbedProvider, GatewayError,
    GeneratedImages, ImageGenProvider, OODProbRow, OodProbProvider, ProviderEndpoint,
    ProviderKind, RetryPolicy,
};

/// Wire attempts made by any HTTP provider in this process. Offline
/// runs assert this stays put.
static TRANSPORT_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

pub fn transport_attempts() -> u64 {
    TRANSPORT_ATTEMPTS.load(Ordering::SeqCst)
}

struct HttpClient {
    endpoint: ProviderEndpoint,
    agent: ureq::Agent,
    gate: AdmissionGate,
    policy: RetryPolicy,
}

impl HttpClient {
    fn new(endpoint: ProviderEndpoint) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(HttpClient {
            gate: AdmissionGate::new(endpoint.max_in_flight),
            policy: RetryPolicy::new(endpoint.max_retries),
            agent: ureq::Agent::new_with_config(config),
            endpoint,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    /// POST a JSON body, with retries for transport failures and
    /// transient statuses (429, 5xx). Other non-2xx replies become
    /// protocol errors carrying the status and a body excerpt.
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.url(path);
        super::run_with_retries(&self.policy, || {
            let _permit = self.gate.acquire();
            TRANSPORT_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
            let mut request = self.agent.post(&url);
            if let Some(token) = &self.endpoint.auth_token {
                request = request.header("authorization", format!("Bearer {token}"));
            }
            let mut response = request.send_json(body).map_err(|e| {
                (
                    GatewayError::Transport {
                        attempts: 1,
                        message: e.to_string(),
                    },
                    true,
                )
            })?;
            let status = response.status().as_u16();
            if (200..300).contains(&status) {
                response.body_mut().read_json::<Value>().map_err(|e| {
                    (
                        GatewayError::InvalidResponse(format!("bad json body: {e}")),
                        false,
                    )
                })
            } else {
                let excerpt: String = response
                    .body_mut()
                    .read_to_string()
                    .unwrap_or_default()
                    .chars()
                    .take(240)
                    .collect();
                let retryable = status == 429 || (500..600).contains(&status);
                Err((
                    GatewayError::Protocol {
                        status,
                        detail: excerpt,
                    },
                    retryable,
                ))
            }
        })
    }
}

fn expect_kind(endpoint: &ProviderEndpoint, kind: ProviderKind) -> Result<(), GatewayError> {
    if endpoint.kind != kind {
        return Err(GatewayError::InvalidRequest(format!(
            "endpoint kind is {}, expected {}",
            endpoint.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

/// OpenAI-compatible `/v1/chat/completions`.
pub struct HttpChatProvider {
    client: HttpClient,
}

impl HttpChatProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, GatewayError> {
        expect_kind(&endpoint, ProviderKind::Chat)?;
        Ok(HttpChatProvider {
            client: HttpClient::new(endpoint)?,
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": self.client.endpoint.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "seed": request.seed,
        });
        let reply = self.client.post_json("/v1/chat/completions", &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::InvalidResponse("no choices[0].message.content".into())
            })
    }

    fn model_name(&self) -> &str {
        &self.client.endpoint.model_name
    }
}

/// OpenAI-compatible `/v1/embeddings`.
pub struct HttpEmbedProvider {
    client: HttpClient,
}

impl HttpEmbedProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, GatewayError> {
        if endpoint.kind != ProviderKind::TextEmbed && endpoint.kind != ProviderKind::ImageEmbed {
            return Err(GatewayError::InvalidRequest(
                "embedding endpoint must be text_embed or image_embed".into(),
            ));
        }
        Ok(HttpEmbedProvider {
            client: HttpClient::new(endpoint)?,
        })
    }
}

impl EmbedProvider for HttpEmbedProvider {
    fn embed(&self, items: &[String]) -> Result<Vec<EmbedItem>, GatewayError> {
        if items.is_empty() {
            return Err(GatewayError::InvalidRequest("no items".into()));
        }
        let body = json!({
            "model": self.client.endpoint.model_name,
            "input": items,
        });
        let reply = self.client.post_json("/v1/embeddings", &body)?;
        let data = reply["data"]
            .as_array()
            .ok_or_else(|| GatewayError::InvalidResponse("no data array".into()))?;
        if data.len() != items.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                items.len(),
                data.len()
            )));
        }
        let mut out: Vec<Option<EmbedItem>> = vec![None; items.len()];
        for entry in data {
            let index = entry["index"]
                .as_u64()
                .ok_or_else(|| GatewayError::InvalidResponse("entry missing index".into()))?
                as usize;
            if index >= items.len() {
                return Err(GatewayError::InvalidResponse(format!(
                    "index {index} out of range"
                )));
            }
            if let Some(message) = entry["error"].as_str() {
                out[index] = Some(Err(message.to_string()));
                continue;
            }
            let vector = entry["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::InvalidResponse("entry missing embedding".into()))?
                .iter()
                .map(|v| v.as_f64().map(|x| x as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into()))?;
            out[index] = Some(Ok(vector));
        }
        out.into_iter()
            .map(|slot| slot.ok_or_else(|| GatewayError::InvalidResponse("missing index".into())))
            .collect()
    }

    fn model_name(&self) -> &str {
        &self.client.endpoint.model_name
    }
}

/// `POST {base}/generate` with `{prompt, n, seed}`.
pub struct HttpImageGenProvider {
    client: HttpClient,
}

impl HttpImageGenProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, GatewayError> {
        expect_kind(&endpoint, ProviderKind::ImageGen)?;
        Ok(HttpImageGenProvider {
            client: HttpClient::new(endpoint)?,
        })
    }
}

impl ImageGenProvider for HttpImageGenProvider {
    fn generate(
        &self,
        prompt: &str,
        n: usize,
        seed: i64,
    ) -> Result<GeneratedImages, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be positive".into()));
        }
        let body = json!({ "prompt": prompt, "n": n, "seed": seed });
        let reply = self.client.post_json("/generate", &body)?;
        let uris: Vec<String> = reply["uris"]
            .as_array()
            .ok_or_else(|| GatewayError::InvalidResponse("no uris array".into()))?
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| GatewayError::InvalidResponse("non-string uri".into()))?;
        if uris.len() > n {
            return Err(GatewayError::InvalidResponse(format!(
                "service returned {} uris for n={n}",
                uris.len()
            )));
        }
        Ok(GeneratedImages {
            failed: n - uris.len(),
            uris,
        })
    }
}

/// `POST {base}/ood_probs` with `{image_uris, concepts, blurred}`.
pub struct HttpOodProbProvider {
    client: HttpClient,
}

impl HttpOodProbProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, GatewayError> {
        expect_kind(&endpoint, ProviderKind::OodProb)?;
        Ok(HttpOodProbProvider {
            client: HttpClient::new(endpoint)?,
        })
    }

    fn fetch(
        &self,
        image_uris: &[String],
        concepts: &[String],
        blurred: bool,
    ) -> Result<Vec<OODProbRow>, GatewayError> {
        if concepts.is_empty() {
            return Err(GatewayError::InvalidRequest("empty concept list".into()));
        }
        let body = json!({
            "image_uris": image_uris,
            "concepts": concepts,
            "blurred": blurred,
        });
        let reply = self.client.post_json("/ood_probs", &body)?;
        serde_json::from_value(reply)
            .map_err(|e| GatewayError::InvalidResponse(format!("bad rows: {e}")))
    }
}

impl OodProbProvider for HttpOodProbProvider {
    fn probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError> {
        self.fetch(image_uris, concepts, false)
    }

    fn blurred_probabilities(
        &self,
        image_uris: &[String],
        concepts: &[String],
    ) -> Result<Vec<OODProbRow>, GatewayError> {
        self.fetch(image_uris, concepts, true)
    }
}

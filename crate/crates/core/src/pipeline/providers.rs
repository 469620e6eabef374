//! Provider assembly: HTTP endpoints from the config, or the
//! deterministic offline simulators.

use std::sync::Arc;

use super::{PipelineConfig, PipelineError, ProviderRole};
use crate::gateway::{
    ChatProvider, EmbedProvider, HttpChatProvider, HttpEmbedProvider, HttpImageGenProvider,
    HttpOodProbProvider, ImageGenProvider, OodProbProvider, ProviderEndpoint, SimChatProvider,
    SimEmbedProvider, SimImageGenProvider, SimOodProbProvider, SimTemplates,
};

pub(crate) const SIM_CHAT_MODEL: &str = "sim-chat";
pub(crate) const SIM_VALIDATOR_MODEL: &str = "sim-validator";
pub(crate) const SIM_JOINT_EMBED_MODEL: &str = "sim-joint-embed";
pub(crate) const SIM_COPY_EMBED_MODEL: &str = "sim-copy-embed";

/// Resolve a `${VAR}` placeholder against the environment; plain values
/// pass through.
pub(crate) fn resolve_secret(raw: &str) -> Result<String, String> {
    if let Some(var) = raw.strip_prefix("${").and_then(|s| s.strip_suffix('}')) {
        std::env::var(var).map_err(|_| format!("environment variable '{var}' is not set"))
    } else {
        Ok(raw.to_string())
    }
}

/// Counters over the offline providers, for asserting call budgets.
struct SimHandles {
    chat: Arc<SimChatProvider>,
    validator: Arc<SimChatProvider>,
    text_embed: Arc<SimEmbedProvider>,
    image_embed: Arc<SimEmbedProvider>,
    image_gen: Arc<SimImageGenProvider>,
    ood: Arc<SimOodProbProvider>,
}

/// The full set of providers a pipeline run needs.
pub struct ProviderSet {
    pub chat: Arc<dyn ChatProvider>,
    pub validator: Arc<dyn ChatProvider>,
    pub text_embed: Arc<dyn EmbedProvider>,
    pub image_embed: Arc<dyn EmbedProvider>,
    pub image_gen: Arc<dyn ImageGenProvider>,
    pub ood: Arc<dyn OodProbProvider>,
    sims: Option<SimHandles>,
}

impl ProviderSet {
    /// Build providers for a resolved config: offline simulators when
    /// the config says so, HTTP providers otherwise.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        if config.effective_offline() {
            Ok(Self::offline(config))
        } else {
            Self::http(config)
        }
    }

    pub fn offline(config: &PipelineConfig) -> Self {
        let templates = SimTemplates {
            generation: config.discovery.generation_template.clone(),
            expansion: config.discovery.expansion_template.clone(),
            validation: config.discovery.validation_template.clone(),
            caption: config.acquisition.caption_template.clone(),
        };
        let sim = &config.offline_sim;
        let chat = Arc::new(SimChatProvider::new(
            SIM_CHAT_MODEL,
            config.base_seed,
            sim.universe_size,
            &templates,
        ));
        let validator = Arc::new(SimChatProvider::new(
            SIM_VALIDATOR_MODEL,
            config.base_seed,
            sim.universe_size,
            &templates,
        ));
        let text_tag = config
            .paths
            .image_store_tag
            .clone()
            .unwrap_or_else(|| SIM_JOINT_EMBED_MODEL.to_string());
        let text_embed = Arc::new(SimEmbedProvider::hashed(text_tag, sim.embed_dim));
        let image_embed = Arc::new(SimEmbedProvider::clustered(
            SIM_COPY_EMBED_MODEL,
            sim.embed_dim,
            sim.copy_clusters,
            sim.copy_jitter,
        ));
        let image_gen = Arc::new(SimImageGenProvider::new());
        let ood = Arc::new(SimOodProbProvider::new());

        ProviderSet {
            chat: chat.clone(),
            validator: validator.clone(),
            text_embed: text_embed.clone(),
            image_embed: image_embed.clone(),
            image_gen: image_gen.clone(),
            ood: ood.clone(),
            sims: Some(SimHandles {
                chat,
                validator,
                text_embed,
                image_embed,
                image_gen,
                ood,
            }),
        }
    }

    fn http(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let endpoint = |role: ProviderRole| -> Result<ProviderEndpoint, PipelineError> {
            let mut ep = config
                .providers
                .get(&role)
                .cloned()
                .ok_or_else(|| PipelineError::Config {
                    violations: vec![format!("missing provider endpoint '{}'", role.as_str())],
                })?;
            if let Some(token) = &ep.auth_token {
                ep.auth_token =
                    Some(resolve_secret(token).map_err(|e| PipelineError::Config {
                        violations: vec![format!("provider '{}': {e}", role.as_str())],
                    })?);
            }
            Ok(ep)
        };
        let gateway_err = |e: crate::gateway::GatewayError| PipelineError::Config {
            violations: vec![e.to_string()],
        };
        Ok(ProviderSet {
            chat: Arc::new(HttpChatProvider::new(endpoint(ProviderRole::Chat)?).map_err(gateway_err)?),
            validator: Arc::new(
                HttpChatProvider::new(endpoint(ProviderRole::ValidatorChat)?).map_err(gateway_err)?,
            ),
            text_embed: Arc::new(
                HttpEmbedProvider::new(endpoint(ProviderRole::TextEmbed)?).map_err(gateway_err)?,
            ),
            image_embed: Arc::new(
                HttpEmbedProvider::new(endpoint(ProviderRole::ImageEmbed)?).map_err(gateway_err)?,
            ),
            image_gen: Arc::new(
                HttpImageGenProvider::new(endpoint(ProviderRole::ImageGen)?).map_err(gateway_err)?,
            ),
            ood: Arc::new(
                HttpOodProbProvider::new(endpoint(ProviderRole::OodProb)?).map_err(gateway_err)?,
            ),
            sims: None,
        })
    }

    /// Total calls made against offline providers, when offline.
    pub fn sim_calls(&self) -> Option<u64> {
        self.sims.as_ref().map(|s| {
            s.chat.calls()
                + s.validator.calls()
                + s.text_embed.calls()
                + s.image_embed.calls()
                + s.image_gen.calls()
                + s.ood.calls()
        })
    }
}

//! Validator backends: live HTTP, replay of recorded responses, and a
//! synthetic stochastic validator.

mod cache;
mod http;
mod prompt;
mod replay;
mod synthetic;

use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{parse_completion, ChatMessage, ChatRequest, HttpBackend, RetryPolicy};
pub use prompt::{render_prompt, PromptRendering, ANSWER_INSTRUCTION, SYSTEM_TEXT};
pub use replay::{FixtureEntry, ReplayBackend};
pub use synthetic::{
    correct_probability, item_key, keyed_index, query_synthetic, shared_difficulty, synthetic_choice,
    SyntheticBackend,
};

use crate::domain::{BackendFailure, EndpointConfig, Question, ValidatorProfile};
use crate::error::ConfigError;

/// Something that can answer a rendered question with raw text.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn query(
        &self,
        question: &Question,
        rendering: &PromptRendering,
    ) -> Result<String, BackendFailure>;

    /// Whether latency is worth recording. Local backends report zero so
    /// replayed runs stay byte-identical.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Builds the backend described by a profile. Relative fixture paths are
/// resolved against `base_dir`.
pub fn build_backend(
    profile: &ValidatorProfile,
    base_dir: &Path,
    cache: Option<&ResponseCache>,
) -> Result<Arc<dyn Backend>, ConfigError> {
    Ok(match &profile.endpoint {
        EndpointConfig::HttpEndpoint(cfg) => {
            let mut backend = HttpBackend::new(&profile.name, cfg.clone())
                .map_err(|e| ConfigError::Profile(format!("{}: {e}", profile.name)))?;
            if let Some(c) = cache {
                backend = backend.with_cache(c.clone());
            }
            Arc::new(backend)
        }
        EndpointConfig::Replay(cfg) => {
            let path = base_dir.join(&cfg.fixture);
            Arc::new(ReplayBackend::load(&profile.name, &path)?)
        }
        EndpointConfig::Synthetic(spec) => {
            spec.check()
                .map_err(|e| ConfigError::Profile(format!("{}: {e}", profile.name)))?;
            Arc::new(SyntheticBackend::new(spec.clone()))
        }
    })
}

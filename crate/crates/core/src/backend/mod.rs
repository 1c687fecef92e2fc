//! Translation backends: an HTTP chat-completions client and three offline
//! mocks, behind one [`Backend`] that adds response caching and a cap on
//! concurrent HTTP requests.
//!
//! Every call to [`Backend::translate`] is a single stateless request built
//! only from the config and the prompt. Nothing carries over between calls.

mod cache;
mod http;
mod limiter;
mod mock;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{extract_candidate, RenderedPrompt};

pub use cache::{cache_key, ResponseCache};
pub use http::{backoff_schedule, parse_completion, request_body};
pub use limiter::Limiter;
pub use mock::{gloss_translate, induce_glossary};

pub const DEFAULT_ENDPOINT_PATH: &str = "/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "NRT_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("mock-perfect needs the reference translation")]
    MissingReference,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpChat,
    MockPerfect,
    MockEcho,
    MockGloss,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::HttpChat => "http-chat",
            BackendKind::MockPerfect => "mock-perfect",
            BackendKind::MockEcho => "mock-echo",
            BackendKind::MockGloss => "mock-gloss",
        }
    }

    pub fn is_mock(self) -> bool {
        self != BackendKind::HttpChat
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" | "http-chat" => Ok(BackendKind::HttpChat),
            "mock-perfect" => Ok(BackendKind::MockPerfect),
            "mock-echo" => Ok(BackendKind::MockEcho),
            "mock-gloss" => Ok(BackendKind::MockGloss),
            other => Err(BackendError::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Scheme and host, e.g. `https://api.x.ai`. HTTP only.
    pub endpoint_url: Option<String>,
    pub endpoint_path: String,
    pub model_name: String,
    /// Name of the environment variable that holds the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First backoff delay; later ones double.
    pub retry_base_ms: u64,
}

impl BackendConfig {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint_url: None,
            endpoint_path: DEFAULT_ENDPOINT_PATH.into(),
            model_name: kind.as_str().into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            retry_base_ms: 500,
        }
    }

    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            ..Self::mock(BackendKind::HttpChat)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        if self.kind == BackendKind::HttpChat {
            if self.endpoint_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
                return bad("http backend needs an endpoint URL");
            }
            if self.model_name.trim().is_empty() {
                return bad("http backend needs a model name");
            }
            if self.api_key_env.trim().is_empty() {
                return bad("http backend needs an API key environment variable name");
            }
        }
        Ok(())
    }

    /// Full request URL: endpoint plus path.
    pub fn url(&self) -> Option<String> {
        self.endpoint_url.as_ref().map(|base| {
            let base = base.trim_end_matches('/');
            let path = self.endpoint_path.trim();
            if path.is_empty() {
                base.to_string()
            } else if path.starts_with('/') {
                format!("{base}{path}")
            } else {
                format!("{base}/{path}")
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResponse {
    pub candidate_raw: String,
    pub candidate: String,
    pub latency: Duration,
    /// Requests sent for this answer; 0 when served from the cache.
    pub attempt_count: u32,
    pub from_cache: bool,
}

/// A configured backend, safe to share between threads.
pub struct Backend {
    config: BackendConfig,
    client: Option<http::HttpClient>,
    cache: Option<ResponseCache>,
    limiter: Limiter,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("config", &self.config)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl Backend {
    /// Validates the config and, for HTTP, resolves the API key from the
    /// environment right away so a missing key fails before any work.
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = match config.kind {
            BackendKind::HttpChat => {
                let key = std::env::var(&config.api_key_env)
                    .ok()
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| BackendError::MissingApiKey(config.api_key_env.clone()))?;
                Some(http::HttpClient::new(&config, key)?)
            }
            _ => None,
        };
        Ok(Self {
            config,
            client,
            cache: None,
            limiter: Limiter::new(4),
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Caps concurrent HTTP requests made through this backend.
    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter = Limiter::new(max.max(1));
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn translate(
        &self,
        prompt: &RenderedPrompt,
        reference_for_mock: Option<&str>,
    ) -> Result<TranslationResponse, BackendError> {
        let start = Instant::now();
        let key = cache_key(&self.config, prompt);
        if let Some(raw) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if let Ok(candidate) = extract_candidate(&raw) {
                return Ok(TranslationResponse {
                    candidate_raw: raw,
                    candidate,
                    latency: start.elapsed(),
                    attempt_count: 0,
                    from_cache: true,
                });
            }
        }
        let (raw, attempts) = match self.config.kind {
            BackendKind::HttpChat => {
                let client = self.client.as_ref().expect("http client built in new");
                let _slot = self.limiter.acquire();
                client.complete(&self.config, prompt)?
            }
            BackendKind::MockPerfect => (
                reference_for_mock
                    .ok_or(BackendError::MissingReference)?
                    .to_string(),
                1,
            ),
            BackendKind::MockEcho => (prompt.target_source.clone(), 1),
            BackendKind::MockGloss => (mock::gloss_response(prompt), 1),
        };
        let candidate = extract_candidate(&raw)
            .map_err(|_| BackendError::MalformedResponse("response has no text".into()))?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &self.config, &raw) {
                log::warn!("could not write cache entry {key}: {e}");
            }
        }
        // Mocks do no I/O; a zero latency keeps their results byte-stable.
        let latency = if self.config.kind.is_mock() {
            Duration::ZERO
        } else {
            start.elapsed()
        };
        Ok(TranslationResponse {
            candidate_raw: raw,
            candidate,
            latency,
            attempt_count: attempts,
            from_cache: false,
        })
    }
}

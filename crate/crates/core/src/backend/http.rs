//! Chat-completions over HTTP (the OpenAI-style JSON shape).

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError};
use crate::prompting::RenderedPrompt;

const MAX_BACKOFF: Duration = Duration::from_secs(60);

/// The JSON body for one isolated request: a system and a user message,
/// no history.
pub fn request_body(config: &BackendConfig, prompt: &RenderedPrompt) -> Value {
    json!({
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [
            { "role": "system", "content": prompt.system_message },
            { "role": "user", "content": prompt.user_message },
        ],
    })
}

/// Reads `choices[0].message.content`.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::MalformedResponse(format!("not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))
}

/// Delays slept before retry 1, 2, ...: `base * 2^k`, capped at one minute.
/// Never decreasing.
pub fn backoff_schedule(base: Duration, max_retries: u32) -> Vec<Duration> {
    (0..max_retries)
        .map(|k| {
            base.checked_mul(1u32.checked_shl(k).unwrap_or(u32::MAX))
                .unwrap_or(MAX_BACKOFF)
                .min(MAX_BACKOFF)
        })
        .collect()
}

pub(super) struct HttpClient {
    agent: ureq::Agent,
    url: String,
    auth: String,
}

impl HttpClient {
    pub(super) fn new(config: &BackendConfig, api_key: String) -> Result<Self, BackendError> {
        let url = config
            .url()
            .ok_or_else(|| BackendError::Config("http backend needs an endpoint URL".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url,
            auth: format!("Bearer {api_key}"),
        })
    }

    /// Sends the request, retrying transient failures. Returns the message
    /// content and the number of attempts made.
    pub(super) fn complete(
        &self,
        config: &BackendConfig,
        prompt: &RenderedPrompt,
    ) -> Result<(String, u32), BackendError> {
        let body = request_body(config, prompt);
        let delays = backoff_schedule(Duration::from_millis(config.retry_base_ms), config.max_retries);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let err = match self.send_once(&body) {
                Ok(text) => return Ok((text, attempts)),
                Err(e) => e,
            };
            let retry_idx = (attempts - 1) as usize;
            if !err.is_transient() {
                return Err(err);
            }
            match delays.get(retry_idx) {
                Some(&delay) => {
                    log::warn!(
                        "request for phrase {} failed (attempt {attempts}): {err}; retrying in {delay:?}",
                        prompt.target_id
                    );
                    std::thread::sleep(delay);
                }
                None if attempts == 1 => return Err(err),
                None => {
                    return Err(BackendError::Exhausted {
                        attempts,
                        last: Box::new(err),
                    })
                }
            }
        }
    }

    fn send_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &self.auth)
            .send_json(body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let mut body = text;
            body.truncate(500);
            return Err(BackendError::Status { status, body });
        }
        parse_completion(&text)
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

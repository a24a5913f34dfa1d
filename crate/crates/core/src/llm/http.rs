//! Generic chat-completions HTTP provider.

use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::provider::{LlmError, Provider, ProviderError, ProviderRequest};

pub const ENV_URL: &str = "DBOX_PROVIDER_URL";
pub const ENV_KEY: &str = "DBOX_PROVIDER_KEY";
pub const ENV_MODEL: &str = "DBOX_PROVIDER_MODEL";
pub const ENV_TIMEOUT_MS: &str = "DBOX_PROVIDER_TIMEOUT_MS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model_id: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, LlmError> {
        HttpConfig::from_lookup(|name| std::env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, LlmError> {
        let endpoint = lookup(ENV_URL)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| LlmError::InvalidRequest(format!("{ENV_URL} is not set")))?;
        let model_id = lookup(ENV_MODEL)
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| LlmError::InvalidRequest(format!("{ENV_MODEL} is not set")))?;
        let timeout = match lookup(ENV_TIMEOUT_MS) {
            None => super::provider::DEFAULT_TIMEOUT,
            Some(raw) => match raw.trim().parse::<u64>() {
                Ok(ms) if ms > 0 => Duration::from_millis(ms),
                _ => {
                    return Err(LlmError::InvalidRequest(format!(
                        "{ENV_TIMEOUT_MS} must be a positive integer, got {raw:?}"
                    )))
                }
            },
        };
        Ok(HttpConfig {
            endpoint,
            api_key: lookup(ENV_KEY).filter(|v| !v.is_empty()),
            model_id,
            timeout,
        })
    }
}

pub struct HttpProvider {
    client: reqwest::Client,
    config: HttpConfig,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        HttpProvider { client: reqwest::Client::new(), config }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

fn request_body(request: &ProviderRequest) -> Value {
    json!({
        "model": request.model_id,
        "temperature": request.temperature,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_payload},
        ],
    })
}

#[async_trait]
impl Provider for HttpProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .timeout(request.timeout)
            .json(&request_body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderError::Unavailable(format!("endpoint answered HTTP {status}")));
        }
        let body: Value = response.json().await.map_err(classify)?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Unavailable("reply has no choices[0].message.content".into()))
    }
}

fn classify(error: reqwest::Error) -> ProviderError {
    if error.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Unavailable(error.to_string())
    }
}

//! Provider abstraction and the retrying call loop.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;
use thiserror::Error;

use super::template::{Pipeline, TemplateError, TemplateSet};
use crate::steptree::Stage;

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    /// The provider is asked for a single JSON object.
    StructuredObject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub model_id: String,
    pub temperature: f64,
    pub response_mode: ResponseMode,
    pub system_prompt: String,
    pub user_payload: String,
    pub timeout: Duration,
    pub pipeline: Pipeline,
    /// Caller-chosen tag (a session or case id) that scripted providers can
    /// key replies on. Never sent to live providers.
    pub correlation: Option<String>,
}

impl ProviderRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_id.trim().is_empty() {
            return Err(LlmError::InvalidRequest("model id is not configured".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidRequest("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub raw: String,
    /// Present only once `raw` has passed validation.
    pub parsed: Option<Value>,
    /// 1-based number of the attempt that produced `raw`.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider timed out")]
    Timeout,
}

#[async_trait]
pub trait Provider: Send + Sync {
    /// Sends one request and returns the model's raw reply text.
    async fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid provider request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider did not answer within {ms} ms")]
    Timeout { ms: u64 },
    #[error("no schema-valid reply after {attempts} attempts: {}", errors.join("; "))]
    RetriesExhausted { attempts: u32, errors: Vec<String> },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("code is empty")]
    EmptyCode,
    #[error("pipeline requires the {expected:?} stage")]
    WrongStage { expected: Stage },
}

impl LlmError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::InvalidRequest(_) => "invalidRequest",
            LlmError::ProviderUnavailable(_) => "providerUnavailable",
            LlmError::Timeout { .. } => "timeout",
            LlmError::RetriesExhausted { .. } => "schemaViolation",
            LlmError::Template(_) => "template",
            LlmError::EmptyCode => "emptyCode",
            LlmError::WrongStage { .. } => "wrongStage",
        }
    }
}

/// Calls `provider` until `validate` accepts a reply or `max_attempts` replies
/// have been rejected. Each retry carries the rejected reply and its errors,
/// rendered through the `retry_feedback` template, after the original
/// payload. Unavailability and timeouts are not retried.
pub async fn call_provider(
    provider: &dyn Provider,
    templates: &TemplateSet,
    request: &ProviderRequest,
    max_attempts: u32,
    validate: impl Fn(&str) -> Result<Value, Vec<String>>,
) -> Result<ProviderResponse, LlmError> {
    request.validate()?;
    let max_attempts = max_attempts.max(1);
    let feedback = templates.get(Pipeline::RetryFeedback)?;
    let mut current = request.clone();
    let mut errors = Vec::new();
    for attempt in 1..=max_attempts {
        let reply = tokio::time::timeout(request.timeout, provider.complete(&current)).await;
        let raw = match reply {
            Err(_) | Ok(Err(ProviderError::Timeout)) => {
                return Err(LlmError::Timeout { ms: request.timeout.as_millis() as u64 })
            }
            Ok(Err(ProviderError::Unavailable(reason))) => {
                return Err(LlmError::ProviderUnavailable(reason))
            }
            Ok(Ok(raw)) => raw,
        };
        match validate(&raw) {
            Ok(parsed) => return Ok(ProviderResponse { raw, parsed: Some(parsed), attempt }),
            Err(found) => {
                tracing::warn!(pipeline = %request.pipeline, attempt, errors = found.len(), "rejected provider reply");
                let bindings = BTreeMap::from([("raw", raw), ("errors", found.join("\n"))]);
                let rendered = feedback.render(&bindings)?;
                current.user_payload = format!("{}\n\n{}", request.user_payload, rendered.user);
                errors = found;
            }
        }
    }
    Err(LlmError::RetriesExhausted { attempts: max_attempts, errors })
}

/// A reply queued on a [`ScriptedProvider`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    Unavailable(String),
    /// Never answers; exercises timeouts.
    Stall,
}

impl From<&str> for ScriptedReply {
    fn from(text: &str) -> Self {
        ScriptedReply::Text(text.to_string())
    }
}

impl From<String> for ScriptedReply {
    fn from(text: String) -> Self {
        ScriptedReply::Text(text)
    }
}

impl From<Value> for ScriptedReply {
    fn from(value: Value) -> Self {
        ScriptedReply::Text(value.to_string())
    }
}

type ScriptKey = (Option<String>, Pipeline);

/// Fixture-driven provider. Replies are queued per pipeline, optionally
/// per correlation tag, and consumed in order. A request first looks for a
/// queue under its own correlation tag, then for the untagged queue.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queues: Mutex<HashMap<ScriptKey, VecDeque<ScriptedReply>>>,
    requests: Mutex<Vec<ProviderRequest>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        ScriptedProvider::default()
    }

    pub fn push(&self, pipeline: Pipeline, reply: impl Into<ScriptedReply>) -> &Self {
        self.push_tagged(None, pipeline, reply)
    }

    pub fn push_for(&self, correlation: &str, pipeline: Pipeline, reply: impl Into<ScriptedReply>) -> &Self {
        self.push_tagged(Some(correlation.to_string()), pipeline, reply)
    }

    fn push_tagged(&self, correlation: Option<String>, pipeline: Pipeline, reply: impl Into<ScriptedReply>) -> &Self {
        let mut queues = self.queues.lock().expect("script lock");
        queues.entry((correlation, pipeline)).or_default().push_back(reply.into());
        self
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ProviderRequest> {
        self.requests.lock().expect("request log lock").clone()
    }

    /// Number of replies still queued.
    pub fn pending(&self) -> usize {
        self.queues.lock().expect("script lock").values().map(VecDeque::len).sum()
    }

    fn next_reply(&self, request: &ProviderRequest) -> Option<ScriptedReply> {
        let mut queues = self.queues.lock().expect("script lock");
        let tagged = (request.correlation.clone(), request.pipeline);
        if let Some(reply) = queues.get_mut(&tagged).and_then(VecDeque::pop_front) {
            return Some(reply);
        }
        queues.get_mut(&(None, request.pipeline)).and_then(VecDeque::pop_front)
    }
}

#[async_trait]
impl Provider for ScriptedProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        self.requests.lock().expect("request log lock").push(request.clone());
        match self.next_reply(request) {
            Some(ScriptedReply::Text(text)) => Ok(text),
            Some(ScriptedReply::Unavailable(reason)) => Err(ProviderError::Unavailable(reason)),
            Some(ScriptedReply::Stall) => std::future::pending().await,
            None => Err(ProviderError::Unavailable(format!(
                "no scripted reply for {}",
                request.pipeline
            ))),
        }
    }
}

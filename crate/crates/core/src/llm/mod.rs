//! LLM orchestration.
//!
//! Four pipelines back the interface buttons: inferring a tree from code,
//! checking a learner's tree, mapping a tree onto code, and checking that
//! code implements a tree. All go through a pluggable [`Provider`] and
//! accept only replies that pass the published response schema.

mod http;
mod pipeline;
mod provider;
pub mod schema;
mod template;

pub use http::{HttpConfig, HttpProvider, ENV_KEY, ENV_MODEL, ENV_TIMEOUT_MS, ENV_URL};
pub use pipeline::{
    clip_lines, number_lines, tree_view, Brief, Evaluation, MappingOutcome, Orchestrator,
    OrchestratorConfig,
};
pub use provider::{
    call_provider, LlmError, Provider, ProviderError, ProviderRequest, ProviderResponse,
    ResponseMode, ScriptedProvider, ScriptedReply, DEFAULT_MAX_ATTEMPTS, DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT,
};
pub use template::{Pipeline, PromptTemplate, RenderedPrompt, TemplateError, TemplateSet};

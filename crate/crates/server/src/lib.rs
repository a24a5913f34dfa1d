//! HTTP session service for step-tree tutoring.
//!
//! Owns the problem bank, learner sessions with their event logs, the
//! provider-backed checks and a sandboxed test runner. [`api::router`]
//! exposes it over HTTP.

pub mod api;
pub mod config;
pub mod events;
pub mod problem;
pub mod runner;
pub mod session;
pub mod store;

use std::sync::Arc;

use anyhow::Context;
use dbox_core::llm::{HttpProvider, Orchestrator, OrchestratorConfig, Provider, TemplateSet};

pub use config::Config;
pub use events::{Event, EventKind};
pub use problem::{Problem, ProblemBank};
pub use runner::{PythonRunner, RunResult, Runner, RunnerLimits};
pub use session::{ServiceConfig, ServiceError, SessionService, TreeOp};
pub use store::{Session, Store};

/// Builds the service described by `config`, reloading persisted sessions.
pub fn build(config: &Config) -> anyhow::Result<Arc<SessionService>> {
    let problems = match &config.problems_dir {
        Some(dir) => ProblemBank::load_dir(dir)?,
        None => ProblemBank::bundled(),
    };
    let (provider, orchestrator_config): (Arc<dyn Provider>, _) = match &config.provider {
        Some(http) => (
            Arc::new(HttpProvider::new(http.clone())),
            OrchestratorConfig { model_id: http.model_id.clone(), timeout: http.timeout, ..OrchestratorConfig::default() },
        ),
        None => {
            tracing::warn!("no provider configured; checks will fail until DBOX_PROVIDER_URL is set");
            (Arc::new(config::NoProvider), OrchestratorConfig::default())
        }
    };
    let orchestrator = Orchestrator::new(provider, TemplateSet::bundled(), orchestrator_config);

    let (store, sessions) = Store::open(&config.data_dir)
        .with_context(|| format!("opening session store in {}", config.data_dir.display()))?;
    tracing::info!(sessions = sessions.len(), dir = %config.data_dir.display(), "session store ready");

    let mut runner = PythonRunner::new(&config.python, config.limits.clone());
    for dir in [Some(&config.data_dir), config.problems_dir.as_ref()].into_iter().flatten() {
        runner = runner.deny(std::fs::canonicalize(dir).unwrap_or_else(|_| dir.clone()));
    }
    Ok(Arc::new(SessionService::new(
        problems,
        Arc::new(orchestrator),
        Arc::new(runner),
        store,
        sessions,
        ServiceConfig { check_interval: config.check_interval },
    )))
}

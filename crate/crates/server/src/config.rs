//! Environment configuration.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use async_trait::async_trait;
use dbox_core::llm::{HttpConfig, Provider, ProviderError, ProviderRequest};

use crate::runner::RunnerLimits;
use crate::session::DEFAULT_CHECK_INTERVAL;

pub const ENV_DATA_DIR: &str = "DBOX_DATA_DIR";
pub const ENV_PROBLEMS_DIR: &str = "DBOX_PROBLEMS_DIR";
pub const ENV_BIND: &str = "DBOX_BIND";
pub const ENV_PYTHON: &str = "DBOX_PYTHON";
pub const ENV_RUN_TIMEOUT_MS: &str = "DBOX_RUN_TIMEOUT_MS";
pub const ENV_RUN_MEMORY_MB: &str = "DBOX_RUN_MEMORY_MB";
pub const ENV_CHECK_INTERVAL_MS: &str = "DBOX_CHECK_INTERVAL_MS";

#[derive(Debug, Clone)]
pub struct Config {
    pub data_dir: PathBuf,
    /// Problem bank directory; the bundled problems when unset.
    pub problems_dir: Option<PathBuf>,
    pub bind: SocketAddr,
    pub python: PathBuf,
    pub limits: RunnerLimits,
    pub check_interval: Duration,
    /// `None` runs without a model: every check answers 502.
    pub provider: Option<HttpConfig>,
}

impl Config {
    pub fn from_env() -> anyhow::Result<Self> {
        Config::from_lookup(|name| std::env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let get = |name: &str| lookup(name).filter(|v| !v.trim().is_empty());
        let millis = |name: &str, default: Duration| -> anyhow::Result<Duration> {
            match get(name) {
                None => Ok(default),
                Some(raw) => {
                    let ms: u64 = raw.trim().parse().with_context(|| format!("{name} must be an integer, got {raw:?}"))?;
                    Ok(Duration::from_millis(ms))
                }
            }
        };
        let bind = get(ENV_BIND).unwrap_or_else(|| "127.0.0.1:8080".into());
        let bind = bind.parse().with_context(|| format!("{ENV_BIND} is not a socket address: {bind:?}"))?;
        let timeout = millis(ENV_RUN_TIMEOUT_MS, crate::runner::DEFAULT_TEST_TIMEOUT)?;
        if timeout.is_zero() {
            bail!("{ENV_RUN_TIMEOUT_MS} must be positive");
        }
        let memory_bytes = match get(ENV_RUN_MEMORY_MB) {
            None => crate::runner::DEFAULT_MEMORY_BYTES,
            Some(raw) => {
                let mb: u64 = raw.trim().parse().with_context(|| format!("{ENV_RUN_MEMORY_MB} must be an integer"))?;
                mb * 1024 * 1024
            }
        };
        let provider = match get(dbox_core::llm::ENV_URL) {
            None => None,
            Some(_) => Some(HttpConfig::from_lookup(&lookup)?),
        };
        Ok(Config {
            data_dir: get(ENV_DATA_DIR).unwrap_or_else(|| "data".into()).into(),
            problems_dir: get(ENV_PROBLEMS_DIR).map(PathBuf::from),
            bind,
            python: get(ENV_PYTHON).unwrap_or_else(|| "python3".into()).into(),
            limits: RunnerLimits { timeout, memory_bytes },
            check_interval: millis(ENV_CHECK_INTERVAL_MS, DEFAULT_CHECK_INTERVAL)?,
            provider,
        })
    }
}

/// Stand-in when no model endpoint is configured.
pub struct NoProvider;

#[async_trait]
impl Provider for NoProvider {
    async fn complete(&self, _request: &ProviderRequest) -> Result<String, ProviderError> {
        Err(ProviderError::Unavailable("no provider configured".into()))
    }
}

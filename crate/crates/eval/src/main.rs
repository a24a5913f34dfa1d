use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dbox_core::llm::{HttpConfig, HttpProvider, OrchestratorConfig, Provider};
use dbox_eval::{DatasetError, MockMode, MockProvider, RunOptions, DEFAULT_CONCURRENCY};

#[derive(Parser)]
#[command(name = "dbox-eval", about = "Score a provider's step judgments on labeled error cases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Predict every case and write predictions plus reports.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        provider: ProviderKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
        concurrency: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Behavior of the mock provider.
        #[arg(long, value_enum, default_value_t = MockMode::Echo)]
        mock_mode: MockMode,
    },
    /// Re-score a predictions file.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also write report files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_MALFORMED: u8 = 2;
const EXIT_RETRIES: u8 = 3;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()).await {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            if error.downcast_ref::<DatasetError>().is_some_and(|e| matches!(e, DatasetError::MalformedCase { .. })) {
                ExitCode::from(EXIT_MALFORMED)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

async fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { dataset, provider, out, concurrency, seed, mock_mode } => {
            let cases = dbox_eval::load_dataset(&dataset)?;
            let mut options = RunOptions { concurrency, seed, ..RunOptions::default() };
            let provider: Arc<dyn Provider> = match provider {
                ProviderKind::Mock => Arc::new(MockProvider::new(&cases, mock_mode)),
                ProviderKind::Http => {
                    let config = HttpConfig::from_env().context("configuring the HTTP provider")?;
                    options.config = OrchestratorConfig {
                        model_id: config.model_id.clone(),
                        timeout: config.timeout,
                        ..OrchestratorConfig::default()
                    };
                    Arc::new(HttpProvider::new(config))
                }
            };
            let outcome = dbox_eval::run(&cases, provider, &options).await?;
            dbox_eval::write_outputs(&out, &outcome)?;
            print!("{}", outcome.table());
            if outcome.too_many_retry_failures() {
                eprintln!(
                    "error: {} of {} cases exhausted their retries",
                    outcome.retries_exhausted(),
                    outcome.predictions.len()
                );
                return Ok(ExitCode::from(EXIT_RETRIES));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { predictions, dataset, out } => {
            let cases = dbox_eval::load_dataset(&dataset)?;
            let outcome = dbox_eval::score_file(&cases, &predictions)?;
            if let Some(out) = out {
                dbox_eval::write_outputs(&out, &outcome)?;
            }
            print!("{}", outcome.table());
            Ok(ExitCode::SUCCESS)
        }
    }
}

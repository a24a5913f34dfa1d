//! Offline evaluation of a provider's step judgments.
//!
//! The harness loads labeled error cases, asks a provider to judge each
//! case's steps, scores every case strictly by part and reports confusion
//! metrics grouped by input mode and error type.

pub mod dataset;
pub mod metrics;
pub mod mock;
pub mod predict;
pub mod report;

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use dbox_core::llm::{Orchestrator, OrchestratorConfig, Provider, TemplateSet};

pub use dataset::{load_dataset, DatasetError, ErrorCase, ErrorType, InputMode, PartLabel};
pub use metrics::{Confusion, Metrics, MetricsError, PartPrediction, Ratio};
pub use mock::{MockMode, MockProvider};
pub use predict::{align, predict, predict_all, score_strict, CasePrediction, Verdict, DEFAULT_CONCURRENCY};
pub use report::{compute_metrics, render_json, render_table, score_cases, MetricsReport};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";

/// Share of cases that may exhaust their retries before a run is flagged.
pub const RETRY_FAILURE_LIMIT: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub seed: u64,
    pub config: OrchestratorConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { concurrency: DEFAULT_CONCURRENCY, seed: 0, config: OrchestratorConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub predictions: Vec<CasePrediction>,
    pub report: MetricsReport,
}

impl RunOutcome {
    /// Cases whose provider kept answering with invalid output.
    pub fn retries_exhausted(&self) -> usize {
        self.predictions
            .iter()
            .filter(|p| p.error.as_ref().is_some_and(|e| e.kind == "schemaViolation"))
            .count()
    }

    pub fn too_many_retry_failures(&self) -> bool {
        !self.predictions.is_empty()
            && self.retries_exhausted() as f64 > RETRY_FAILURE_LIMIT * self.predictions.len() as f64
    }

    pub fn table(&self) -> String {
        render_table(&self.report)
    }

    pub fn json(&self) -> String {
        render_json(&self.report, &self.predictions)
    }
}

/// Predicts and scores every case.
pub async fn run(cases: &[ErrorCase], provider: Arc<dyn Provider>, options: &RunOptions) -> anyhow::Result<RunOutcome> {
    let orchestrator = Orchestrator::new(provider, TemplateSet::bundled(), options.config.clone());
    let predictions = predict_all(cases, &orchestrator, options.concurrency, options.seed).await;
    let report = compute_metrics(score_cases(cases, &predictions))?;
    Ok(RunOutcome { predictions, report })
}

/// Scores previously written predictions against the dataset.
pub fn score_file(cases: &[ErrorCase], predictions_path: &Path) -> anyhow::Result<RunOutcome> {
    let predictions = read_predictions(predictions_path)?;
    if let Some(unknown) = predictions.iter().find(|p| !cases.iter().any(|c| c.case_id == p.case_id)) {
        anyhow::bail!("prediction for unknown case {:?}", unknown.case_id);
    }
    let report = compute_metrics(score_cases(cases, &predictions))?;
    Ok(RunOutcome { predictions, report })
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<CasePrediction>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad prediction record", path.display(), i + 1))
        })
        .collect()
}

pub fn predictions_jsonl(predictions: &[CasePrediction]) -> String {
    predictions
        .iter()
        .map(|p| serde_json::to_string(p).expect("predictions serialize") + "\n")
        .collect()
}

/// Writes predictions and both report renderings into `dir`.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write(PREDICTIONS_FILE, predictions_jsonl(&outcome.predictions))?;
    write(REPORT_TEXT_FILE, outcome.table())?;
    write(REPORT_JSON_FILE, outcome.json())?;
    Ok(())
}

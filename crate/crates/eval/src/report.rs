//! Grouped metrics and their text and JSON renderings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{ErrorCase, ErrorType, InputMode};
use crate::metrics::{Confusion, Metrics, MetricsError, PartPrediction};
use crate::predict::{score_strict, CasePrediction};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupReport {
    pub input_mode: InputMode,
    pub error_type: ErrorType,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricsReport {
    /// Sorted by input mode, then error type.
    pub groups: Vec<GroupReport>,
}

impl MetricsReport {
    pub fn group(&self, mode: InputMode, error_type: ErrorType) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.input_mode == mode && g.error_type == error_type)
    }
}

/// Aggregates scored parts per (input mode, error type).
pub fn compute_metrics(
    records: impl IntoIterator<Item = (InputMode, ErrorType, PartPrediction)>,
) -> Result<MetricsReport, MetricsError> {
    let mut grouped: BTreeMap<(InputMode, ErrorType), Confusion> = BTreeMap::new();
    for (mode, error_type, pred) in records {
        grouped.entry((mode, error_type)).or_default().add(pred);
    }
    let groups = grouped
        .into_iter()
        .map(|((input_mode, error_type), confusion)| {
            Ok(GroupReport { input_mode, error_type, confusion, metrics: confusion.metrics()? })
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(MetricsReport { groups })
}

/// Scores each case against its prediction. A case with no prediction
/// scores as failed.
pub fn score_cases(cases: &[ErrorCase], predictions: &[CasePrediction]) -> Vec<(InputMode, ErrorType, PartPrediction)> {
    let by_id: BTreeMap<&str, &CasePrediction> = predictions.iter().map(|p| (p.case_id.as_str(), p)).collect();
    cases
        .iter()
        .map(|case| {
            let pred = match by_id.get(case.case_id.as_str()) {
                Some(p) => score_strict(case, p),
                None => PartPrediction::FAILED,
            };
            (case.input_mode, case.error_type, pred)
        })
        .collect()
}

const HEADER_LABEL: &str = "Error type";
const LABEL_WIDTH: usize = 18;

/// Table text: a header line, then one section per input mode with a row
/// per error type, values rounded half up to two decimals.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = format!("{HEADER_LABEL:<LABEL_WIDTH$} {}\n", Metrics::COLUMNS.join(" "));
    for mode in InputMode::ALL {
        let rows: Vec<_> = report.groups.iter().filter(|g| g.input_mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("[{mode}]\n"));
        for group in rows {
            out.push_str(&format!("{:<LABEL_WIDTH$} {}\n", group.error_type.name(), group.metrics.row()));
        }
    }
    out
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct JsonGroup {
    input_mode: InputMode,
    error_type: ErrorType,
    cases: u64,
    confusion: Confusion,
    metrics: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct JsonReport {
    groups: Vec<JsonGroup>,
    alignment_failures: usize,
    provider_errors: usize,
}

/// Machine-readable report with unrounded values.
pub fn render_json(report: &MetricsReport, predictions: &[CasePrediction]) -> String {
    let groups = report
        .groups
        .iter()
        .map(|g| {
            let names = ["accuracy", "f1", "precision", "tpr", "tnr", "fpr", "fnr"];
            JsonGroup {
                input_mode: g.input_mode,
                error_type: g.error_type,
                cases: g.confusion.tp + g.confusion.fn_,
                confusion: g.confusion,
                metrics: names.into_iter().zip(g.metrics.values().map(|r| r.value())).collect(),
            }
        })
        .collect();
    let json = JsonReport {
        groups,
        alignment_failures: predictions.iter().filter(|p| p.alignment_failure).count(),
        provider_errors: predictions.iter().filter(|p| p.error.is_some()).count(),
    };
    serde_json::to_string_pretty(&json).expect("report serializes")
}

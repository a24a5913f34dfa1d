//! Getting step judgments from a provider and scoring them strictly.

use std::collections::{BTreeMap, HashSet};

use dbox_core::llm::{Brief, Orchestrator};
use dbox_core::steptree::{EvaluatedRecord, EvaluatedStatus, EvaluatedTree, FormationStatus, NodeId};
use futures::stream::{self, StreamExt};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ErrorCase, InputMode, MissingStep, PartLabel};
use crate::metrics::PartPrediction;

pub const DEFAULT_CONCURRENCY: usize = 4;

/// Judgment for one labeled step. A missing step the provider did not flag
/// reads as `Correct`: nothing was found wrong there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Missing,
}

impl Verdict {
    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictError {
    pub kind: String,
    pub message: String,
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CasePrediction {
    pub case_id: String,
    pub steps: BTreeMap<String, Verdict>,
    pub alignment_failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<PredictError>,
}

impl CasePrediction {
    pub fn usable(&self) -> bool {
        !self.alignment_failure && self.error.is_none()
    }
}

/// Asks the provider to judge the case's steps. Natural-language cases send
/// the tree as is; code cases send the code with the tree as context.
pub async fn predict(case: &ErrorCase, orchestrator: &Orchestrator) -> CasePrediction {
    let brief = Brief::new(&case.problem).tagged(&case.case_id);
    let result = match (case.input_mode, &case.code) {
        (InputMode::Code, Some(code)) => orchestrator.infer_tree_from_code(brief, code, &case.tree).await,
        _ => orchestrator.evaluate_tree(brief, &case.tree).await,
    };
    match result {
        Ok(evaluation) => align(case, &evaluation.tree),
        Err(error) => {
            tracing::warn!(case = %case.case_id, %error, "provider call failed");
            CasePrediction {
                case_id: case.case_id.clone(),
                steps: BTreeMap::new(),
                alignment_failure: false,
                error: Some(PredictError { kind: error.kind().to_string(), message: error.to_string() }),
            }
        }
    }
}

/// Matches evaluated records to the case's labeled steps.
///
/// Existing steps match by id and need a formation judgment. Each missing
/// step is credited to the first unused id-less `missing` record placed
/// under the same parent. A labeled step without a judgment is an alignment
/// failure.
pub fn align(case: &ErrorCase, eval: &EvaluatedTree) -> CasePrediction {
    let mut steps = BTreeMap::new();
    let mut alignment_failure = false;

    let mut judged = BTreeMap::new();
    for record in eval.walk() {
        if let (Some(id), EvaluatedStatus::Formation(status)) = (&record.matched_node_id, record.status) {
            judged.entry(id.clone()).or_insert(status);
        }
    }
    for id in case.labels.keys() {
        let verdict = match judged.get(id) {
            Some(FormationStatus::Correct) => Verdict::Correct,
            Some(FormationStatus::Incorrect) => Verdict::Incorrect,
            Some(FormationStatus::Missing) => Verdict::Missing,
            Some(FormationStatus::Unchecked) | None => {
                alignment_failure = true;
                continue;
            }
        };
        steps.insert(id.as_str().to_string(), verdict);
    }

    let mut flagged = Vec::new();
    collect_missing(&eval.records, None, &mut flagged);
    let mut used = HashSet::new();
    for MissingStep { id, parent, .. } in &case.missing_steps {
        let hit = flagged.iter().enumerate().find(|(i, p)| *p == parent && !used.contains(i)).map(|(i, _)| i);
        let verdict = match hit {
            Some(i) => {
                used.insert(i);
                Verdict::Missing
            }
            None => Verdict::Correct,
        };
        steps.insert(id.clone(), verdict);
    }

    CasePrediction { case_id: case.case_id.clone(), steps, alignment_failure, error: None }
}

/// Parents of every id-less missing record, in pre-order.
fn collect_missing(records: &[EvaluatedRecord], enclosing: Option<&NodeId>, out: &mut Vec<Option<NodeId>>) {
    for record in records {
        let missing = record.status == EvaluatedStatus::Formation(FormationStatus::Missing);
        if record.matched_node_id.is_none() && missing {
            let parent = match &record.insertion_hint {
                Some(hint) => hint.parent.clone(),
                None => enclosing.cloned(),
            };
            out.push(parent);
        }
        let next = record.matched_node_id.as_ref().or(enclosing);
        collect_missing(&record.children, next, out);
    }
}

/// Strict part scoring. Unusable predictions count against the provider.
pub fn score_strict(case: &ErrorCase, prediction: &CasePrediction) -> PartPrediction {
    if !prediction.usable() {
        return PartPrediction::FAILED;
    }
    let verdict = |id: &str| prediction.steps.get(id).copied();
    let correct_ok = case
        .steps_in(PartLabel::CorrectPart)
        .all(|id| verdict(id.as_str()).is_some_and(Verdict::is_correct));
    let error_flagged = case
        .steps_in(PartLabel::ErrorPart)
        .map(NodeId::as_str)
        .chain(case.missing_steps.iter().map(|m| m.id.as_str()))
        .all(|id| verdict(id).is_some_and(|v| !v.is_correct()));
    PartPrediction::new(correct_ok, error_flagged)
}

/// Predicts every case with at most `concurrency` calls in flight. Cases are
/// dispatched in an order shuffled by `seed`; results come back in dataset
/// order regardless.
pub async fn predict_all(
    cases: &[ErrorCase],
    orchestrator: &Orchestrator,
    concurrency: usize,
    seed: u64,
) -> Vec<CasePrediction> {
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut StdRng::seed_from_u64(seed));
    let mut results: Vec<(usize, CasePrediction)> = stream::iter(order)
        .map(|i| async move { (i, predict(&cases[i], orchestrator).await) })
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, p)| p).collect()
}

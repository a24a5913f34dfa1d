//! Scripted provider answering from a case's own labels.
//!
//! Requests are routed by their correlation tag, which the harness sets to
//! the case id. The mock reads the case and answers accordingly; it never
//! looks at the prompt text.

use std::collections::HashMap;

use async_trait::async_trait;
use dbox_core::llm::{Pipeline, Provider, ProviderError, ProviderRequest};
use dbox_core::steptree::{NodeId, StepNode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{ErrorCase, PartLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Judges every step by its label and reports every missing step.
    #[default]
    Echo,
    /// Flips every judgment and reports no missing steps.
    Invert,
    /// Like `Echo`, but leaves the first correct-part step out of the reply.
    Drop,
}

pub struct MockProvider {
    cases: HashMap<String, ErrorCase>,
    mode: MockMode,
}

impl MockProvider {
    pub fn new(cases: &[ErrorCase], mode: MockMode) -> Self {
        MockProvider { cases: cases.iter().map(|c| (c.case_id.clone(), c.clone())).collect(), mode }
    }

    fn judge(&self, case: &ErrorCase) -> Value {
        let dropped = match self.mode {
            MockMode::Drop => case.steps_in(PartLabel::CorrectPart).next().cloned(),
            _ => None,
        };
        json!({ "nodes": self.judge_list(case, None, &case.tree.roots, dropped.as_ref()) })
    }

    fn judge_list(&self, case: &ErrorCase, parent: Option<&NodeId>, nodes: &[StepNode], dropped: Option<&NodeId>) -> Vec<Value> {
        let mut out = Vec::new();
        let missing_here = |after: Option<&NodeId>| missing_records(case, parent, after);
        let report_missing = self.mode != MockMode::Invert;
        if report_missing {
            out.extend(missing_here(None));
        }
        for node in nodes {
            let children = self.judge_list(case, Some(&node.id), &node.children, dropped);
            if Some(&node.id) == dropped {
                out.extend(children);
            } else {
                let correct = case.labels.get(&node.id) == Some(&PartLabel::CorrectPart);
                let correct = correct != (self.mode == MockMode::Invert);
                out.push(json!({
                    "id": node.id.as_str(),
                    "text": node.text,
                    "status": if correct { "correct" } else { "incorrect" },
                    "children": children,
                }));
            }
            if report_missing {
                out.extend(missing_here(Some(&node.id)));
            }
        }
        out
    }

    /// Draft for the from-code stage: the case's own steps, ids kept.
    fn draft(nodes: &[StepNode]) -> Vec<Value> {
        nodes
            .iter()
            .map(|n| json!({ "id": n.id.as_str(), "text": n.text, "children": MockProvider::draft(&n.children) }))
            .collect()
    }
}

fn missing_records(case: &ErrorCase, parent: Option<&NodeId>, after: Option<&NodeId>) -> Vec<Value> {
    case.missing_steps
        .iter()
        .filter(|m| m.parent.as_ref() == parent && m.after.as_ref() == after)
        .map(|m| json!({ "id": null, "text": format!("missing step {}", m.id), "status": "missing", "insertAfter": m.after }))
        .collect()
}

#[async_trait]
impl Provider for MockProvider {
    async fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let case = request
            .correlation
            .as_deref()
            .and_then(|id| self.cases.get(id))
            .ok_or_else(|| ProviderError::Unavailable("mock has no case for this request".into()))?;
        let reply = match request.pipeline {
            Pipeline::FromCode => json!({ "nodes": MockProvider::draft(&case.tree.roots) }),
            Pipeline::FromStepTree => self.judge(case),
            other => return Err(ProviderError::Unavailable(format!("mock does not answer {}", other.name()))),
        };
        Ok(reply.to_string())
    }
}

//! The provider response schema and its validator.
//!
//! [`RESPONSE_SCHEMA`] is the published JSON Schema. [`validate`] checks a
//! parsed value against the same rules by hand, collecting every violation
//! with a JSON path so the list can be fed back to the model on retry.
//! Pipelines then layer status rules on top with [`StatusRule`].

use serde::Deserialize;
use serde_json::Value;

use crate::steptree::{FormationStatus, ImplementationStatus};

pub const RESPONSE_SCHEMA: &str = include_str!("../../assets/response.schema.json");

/// Deeper nesting than this is rejected outright.
pub const MAX_NESTING: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseDoc {
    pub nodes: Vec<ResponseNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResponseNode {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub status: Option<ResponseStatus>,
    #[serde(default)]
    pub divisible: bool,
    #[serde(default)]
    pub hints: Option<ResponseHints>,
    #[serde(default)]
    pub lines: Option<RawLines>,
    #[serde(default)]
    pub insert_after: Option<String>,
    #[serde(default)]
    pub children: Vec<ResponseNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Correct,
    Incorrect,
    Missing,
    Implemented,
    IncorrectlyImplemented,
    ToBeCoded,
}

const STATUS_NAMES: [&str; 6] =
    ["correct", "incorrect", "missing", "implemented", "incorrectly_implemented", "to_be_coded"];

impl ResponseStatus {
    pub fn formation(self) -> Option<FormationStatus> {
        match self {
            ResponseStatus::Correct => Some(FormationStatus::Correct),
            ResponseStatus::Incorrect => Some(FormationStatus::Incorrect),
            ResponseStatus::Missing => Some(FormationStatus::Missing),
            _ => None,
        }
    }

    pub fn implementation(self) -> Option<ImplementationStatus> {
        match self {
            ResponseStatus::Implemented => Some(ImplementationStatus::Implemented),
            ResponseStatus::IncorrectlyImplemented => Some(ImplementationStatus::IncorrectlyImplemented),
            ResponseStatus::ToBeCoded => Some(ImplementationStatus::ToBeCoded),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseHints {
    #[serde(default)]
    pub general: Option<String>,
    #[serde(default)]
    pub detailed: Option<String>,
    #[serde(default)]
    pub reveal: Option<String>,
}

/// Line references as sent by the model: one `[start, end]` pair or a list
/// of them. Values are unchecked until clipped against the code.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum RawLines {
    One([i64; 2]),
    Many(Vec<[i64; 2]>),
}

impl RawLines {
    pub fn pairs(&self) -> Vec<(i64, i64)> {
        match self {
            RawLines::One([s, e]) => vec![(*s, *e)],
            RawLines::Many(list) => list.iter().map(|[s, e]| (*s, *e)).collect(),
        }
    }
}

/// Extra status requirements a pipeline puts on every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusRule {
    /// Status may be absent; any schema value is accepted.
    Any,
    /// Status required and one of correct/incorrect/missing.
    Formation,
    /// Status required and one of the three implementation statuses.
    Implementation,
}

/// Checks `value` against the response schema. Returns every violation.
pub fn validate(value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    let Some(object) = value.as_object() else {
        errors.push("$: expected an object".to_string());
        return errors;
    };
    for key in object.keys() {
        if key != "nodes" {
            errors.push(format!("$: unexpected key {key:?}"));
        }
    }
    match object.get("nodes") {
        None => errors.push("$: missing required key \"nodes\"".to_string()),
        Some(nodes) => validate_node_list(nodes, "$.nodes", 1, &mut errors),
    }
    errors
}

fn validate_node_list(value: &Value, path: &str, depth: usize, errors: &mut Vec<String>) {
    let Some(list) = value.as_array() else {
        errors.push(format!("{path}: expected an array"));
        return;
    };
    if depth > MAX_NESTING {
        errors.push(format!("{path}: nested deeper than {MAX_NESTING} levels"));
        return;
    }
    for (i, node) in list.iter().enumerate() {
        validate_node(node, &format!("{path}[{i}]"), depth, errors);
    }
}

fn validate_node(value: &Value, path: &str, depth: usize, errors: &mut Vec<String>) {
    let Some(object) = value.as_object() else {
        errors.push(format!("{path}: expected an object"));
        return;
    };
    if !object.contains_key("text") {
        errors.push(format!("{path}: missing required key \"text\""));
    }
    for (key, field) in object {
        let here = format!("{path}.{key}");
        match key.as_str() {
            "id" | "insertAfter" => expect_string_or_null(field, &here, errors),
            "text" => {
                if !field.is_string() {
                    errors.push(format!("{here}: expected a string"));
                }
            }
            "status" => {
                if !field.as_str().is_some_and(|s| STATUS_NAMES.contains(&s)) {
                    errors.push(format!("{here}: expected one of {}", STATUS_NAMES.join(", ")));
                }
            }
            "divisible" => {
                if !field.is_boolean() {
                    errors.push(format!("{here}: expected a boolean"));
                }
            }
            "hints" => validate_hints(field, &here, errors),
            "lines" => validate_lines(field, &here, errors),
            "children" => validate_node_list(field, &here, depth + 1, errors),
            _ => errors.push(format!("{path}: unexpected key {key:?}")),
        }
    }
}

fn expect_string_or_null(value: &Value, path: &str, errors: &mut Vec<String>) {
    if !(value.is_string() || value.is_null()) {
        errors.push(format!("{path}: expected a string or null"));
    }
}

fn validate_hints(value: &Value, path: &str, errors: &mut Vec<String>) {
    if value.is_null() {
        return;
    }
    let Some(object) = value.as_object() else {
        errors.push(format!("{path}: expected an object or null"));
        return;
    };
    for (key, field) in object {
        match key.as_str() {
            "general" | "detailed" | "reveal" => expect_string_or_null(field, &format!("{path}.{key}"), errors),
            _ => errors.push(format!("{path}: unexpected key {key:?}")),
        }
    }
}

fn is_range(value: &Value) -> bool {
    value
        .as_array()
        .is_some_and(|pair| pair.len() == 2 && pair.iter().all(|v| v.as_i64().is_some()))
}

fn validate_lines(value: &Value, path: &str, errors: &mut Vec<String>) {
    if value.is_null() || is_range(value) {
        return;
    }
    match value.as_array() {
        Some(list) if list.iter().all(is_range) => {}
        _ => errors.push(format!(
            "{path}: expected null, a [start, end] pair of integers, or a list of such pairs"
        )),
    }
}

/// Applies a pipeline's status rule to an already schema-valid document.
pub fn check_statuses(doc: &ResponseDoc, rule: StatusRule) -> Vec<String> {
    let mut errors = Vec::new();
    if rule != StatusRule::Any {
        check_status_list(&doc.nodes, "$.nodes", rule, &mut errors);
    }
    errors
}

fn check_status_list(nodes: &[ResponseNode], path: &str, rule: StatusRule, errors: &mut Vec<String>) {
    for (i, node) in nodes.iter().enumerate() {
        let here = format!("{path}[{i}]");
        let ok = match (rule, node.status) {
            (_, None) => {
                errors.push(format!("{here}: missing required key \"status\""));
                true
            }
            (StatusRule::Formation, Some(s)) => s.formation().is_some(),
            (StatusRule::Implementation, Some(s)) => s.implementation().is_some(),
            (StatusRule::Any, Some(_)) => true,
        };
        if !ok {
            let allowed = match rule {
                StatusRule::Formation => "correct, incorrect, missing",
                _ => "implemented, incorrectly_implemented, to_be_coded",
            };
            errors.push(format!("{here}.status: expected one of {allowed}"));
        }
        check_status_list(&node.children, &format!("{here}.children"), rule, errors);
    }
}

/// Parses raw model output into a response document.
///
/// A single surrounding Markdown code fence is tolerated. On failure every
/// problem found is returned.
pub fn parse_response(raw: &str, rule: StatusRule) -> Result<(Value, ResponseDoc), Vec<String>> {
    let value: Value = serde_json::from_str(strip_fence(raw))
        .map_err(|e| vec![format!("$: not valid JSON: {e}")])?;
    let errors = validate(&value);
    if !errors.is_empty() {
        return Err(errors);
    }
    let doc: ResponseDoc = serde_json::from_value(value.clone())
        .map_err(|e| vec![format!("$: {e}")])?;
    let errors = check_statuses(&doc, rule);
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok((value, doc))
}

fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else { return trimmed };
    let Some(body) = rest.strip_suffix("```") else { return trimmed };
    // drop an info string such as `json` on the opening fence line
    match body.split_once('\n') {
        Some((info, inner)) if !info.contains('{') => inner.trim(),
        _ => body.trim(),
    }
}

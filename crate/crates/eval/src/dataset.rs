//! Labeled error cases and their on-disk format.
//!
//! A dataset is a directory of `*.json` files, one case per file, loaded in
//! file-name order. Each case carries a step tree in the engine's canonical
//! wire format plus a `labels` sidecar assigning every step to the case's
//! correct part or its error part. Steps the learner left out entirely are
//! listed under `missingSteps`; they always belong to the error part.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use dbox_core::steptree::{NodeId, StepNode, StepTree};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    NaturalLanguage,
    Code,
}

impl InputMode {
    pub const ALL: [InputMode; 2] = [InputMode::NaturalLanguage, InputMode::Code];

    pub fn name(self) -> &'static str {
        match self {
            InputMode::NaturalLanguage => "natural_language",
            InputMode::Code => "code",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    SequenceChanged,
    LogicalError,
    Missing,
    SyntaxError,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] =
        [ErrorType::SequenceChanged, ErrorType::LogicalError, ErrorType::Missing, ErrorType::SyntaxError];

    pub fn name(self) -> &'static str {
        match self {
            ErrorType::SequenceChanged => "sequence_changed",
            ErrorType::LogicalError => "logical_error",
            ErrorType::Missing => "missing",
            ErrorType::SyntaxError => "syntax_error",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    CorrectPart,
    ErrorPart,
}

/// A step absent from the learner's tree. `parent` is where it belongs
/// (`None` for the top level) and `after` the sibling it should follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MissingStep {
    pub id: String,
    #[serde(default)]
    pub parent: Option<NodeId>,
    #[serde(default)]
    pub after: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct ErrorCase {
    pub case_id: String,
    pub problem_id: String,
    /// Problem statement shown to the provider.
    pub problem: String,
    pub input_mode: InputMode,
    pub error_type: ErrorType,
    pub tree: StepTree,
    /// Learner code; present exactly for code-mode cases.
    pub code: Option<String>,
    pub labels: BTreeMap<NodeId, PartLabel>,
    pub missing_steps: Vec<MissingStep>,
    /// File the case was loaded from, if any.
    pub source: Option<PathBuf>,
}

impl ErrorCase {
    pub fn steps_in(&self, part: PartLabel) -> impl Iterator<Item = &NodeId> {
        self.labels.iter().filter(move |(_, l)| **l == part).map(|(id, _)| id)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed case {}: field `{field}`: {reason}", path.display())]
    MalformedCase { path: PathBuf, field: String, reason: String },
}

impl DatasetError {
    fn malformed(path: &Path, field: &str, reason: impl Into<String>) -> Self {
        DatasetError::MalformedCase { path: path.to_path_buf(), field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawCase {
    case_id: String,
    problem_id: String,
    problem: String,
    input_mode: InputMode,
    error_type: ErrorType,
    tree: Value,
    #[serde(default)]
    code: Option<String>,
    labels: BTreeMap<String, PartLabel>,
    #[serde(default)]
    missing_steps: Vec<MissingStep>,
}

/// Loads and validates every case in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<ErrorCase>, DatasetError> {
    let io = |source| DatasetError::Io { path: dir.to_path_buf(), source };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();

    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(files.len());
    for path in files {
        let text = std::fs::read_to_string(&path)
            .map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let case = parse_case(&text, &path)?;
        if !seen.insert(case.case_id.clone()) {
            return Err(DatasetError::malformed(&path, "caseId", format!("duplicate case id {:?}", case.case_id)));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Parses and validates one case. `path` is only used in error messages.
pub fn parse_case(text: &str, path: &Path) -> Result<ErrorCase, DatasetError> {
    let raw: RawCase = serde_json::from_str(text).map_err(|e| {
        let field = field_of(&e.to_string());
        DatasetError::malformed(path, &field, e.to_string())
    })?;

    if raw.case_id.trim().is_empty() {
        return Err(DatasetError::malformed(path, "caseId", "must not be empty"));
    }
    if raw.error_type == ErrorType::SyntaxError && raw.input_mode != InputMode::Code {
        return Err(DatasetError::malformed(path, "errorType", "syntax_error cases must use code input"));
    }
    let code = match (raw.input_mode, raw.code) {
        (InputMode::Code, Some(code)) if !code.trim().is_empty() => Some(code),
        (InputMode::Code, _) => return Err(DatasetError::malformed(path, "code", "code cases need non-empty code")),
        (InputMode::NaturalLanguage, Some(_)) => {
            return Err(DatasetError::malformed(path, "code", "natural_language cases carry no code"))
        }
        (InputMode::NaturalLanguage, None) => None,
    };
    let tree = StepTree::from_wire_json(&raw.tree.to_string())
        .map_err(|e| DatasetError::malformed(path, "tree", e.to_string()))?;
    if tree.is_empty() {
        return Err(DatasetError::malformed(path, "tree", "tree has no steps"));
    }

    let mut labels = BTreeMap::new();
    for (id, label) in raw.labels {
        let id = NodeId::new(id);
        if !tree.contains(&id) {
            return Err(DatasetError::malformed(path, "labels", format!("{id} is not a step of the tree")));
        }
        labels.insert(id, label);
    }
    if let Some(unlabeled) = tree.nodes().find(|n| !labels.contains_key(&n.id)) {
        return Err(DatasetError::malformed(path, "labels", format!("step {} has no label", unlabeled.id)));
    }

    let mut missing_ids = HashSet::new();
    for step in &raw.missing_steps {
        if tree.contains(&NodeId::new(step.id.as_str())) || !missing_ids.insert(step.id.as_str()) {
            return Err(DatasetError::malformed(path, "missingSteps", format!("id {:?} is not unique", step.id)));
        }
        let siblings: &[StepNode] = match &step.parent {
            None => &tree.roots,
            Some(parent) => match tree.node(parent) {
                Some(node) => &node.children,
                None => {
                    return Err(DatasetError::malformed(path, "missingSteps", format!("unknown parent {parent}")))
                }
            },
        };
        if let Some(after) = &step.after {
            if !siblings.iter().any(|n| &n.id == after) {
                return Err(DatasetError::malformed(
                    path,
                    "missingSteps",
                    format!("{after} is not a child of the stated parent"),
                ));
            }
        }
    }
    if raw.error_type == ErrorType::Missing && raw.missing_steps.is_empty() {
        return Err(DatasetError::malformed(path, "missingSteps", "missing cases list at least one missing step"));
    }

    let correct = labels.values().filter(|l| **l == PartLabel::CorrectPart).count();
    let error = labels.len() - correct + raw.missing_steps.len();
    if correct == 0 {
        return Err(DatasetError::malformed(path, "labels", "correct part is empty"));
    }
    if error == 0 {
        return Err(DatasetError::malformed(path, "labels", "error part is empty"));
    }

    Ok(ErrorCase {
        case_id: raw.case_id,
        problem_id: raw.problem_id,
        problem: raw.problem,
        input_mode: raw.input_mode,
        error_type: raw.error_type,
        tree,
        code,
        labels,
        missing_steps: raw.missing_steps,
        source: Some(path.to_path_buf()),
    })
}

/// Best-effort field name from a serde error message.
fn field_of(message: &str) -> String {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = message.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "case".to_string()
}

//! Problem bank: statements, tests and hidden reference solutions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TestCase {
    /// Positional arguments for the entry point, as a JSON array.
    pub input: Vec<Value>,
    pub expected: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub title: String,
    /// Markdown.
    pub description: String,
    pub starter_code: String,
    /// Function the runner calls with each test's arguments.
    pub entry_point: String,
    #[serde(default = "default_comment_style")]
    pub comment_style: String,
    pub tests: Vec<TestCase>,
    #[serde(default)]
    pub reference_solutions: Vec<String>,
}

fn default_comment_style() -> String {
    "python".into()
}

/// What learners may see of a problem: no expected outputs, no solutions.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PublicProblem {
    pub id: String,
    pub title: String,
    pub description: String,
    pub starter_code: String,
    pub entry_point: String,
    pub comment_style: String,
    pub tests: Vec<PublicTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublicTest {
    pub input: Vec<Value>,
}

impl Problem {
    pub fn public_view(&self) -> PublicProblem {
        PublicProblem {
            id: self.id.clone(),
            title: self.title.clone(),
            description: self.description.clone(),
            starter_code: self.starter_code.clone(),
            entry_point: self.entry_point.clone(),
            comment_style: self.comment_style.clone(),
            tests: self.tests.iter().map(|t| PublicTest { input: t.input.clone() }).collect(),
        }
    }

    /// Statement handed to the provider.
    pub fn brief(&self) -> String {
        format!("{}\n\n{}", self.title, self.description)
    }
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read problem bank {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid problem file {}: {reason}", path.display())]
    Invalid { path: PathBuf, reason: String },
}

const BUNDLED: &[(&str, &str)] = &[
    ("search-in-rotated-sorted-array.json", include_str!("../problems/search-in-rotated-sorted-array.json")),
    ("two-sum.json", include_str!("../problems/two-sum.json")),
    ("valid-palindrome.json", include_str!("../problems/valid-palindrome.json")),
];

#[derive(Debug, Clone, Default)]
pub struct ProblemBank {
    problems: BTreeMap<String, Problem>,
}

impl ProblemBank {
    pub fn bundled() -> Self {
        let mut bank = ProblemBank::default();
        for (name, text) in BUNDLED {
            let problem = parse(text, Path::new(name)).expect("bundled problems are valid");
            bank.problems.insert(problem.id.clone(), problem);
        }
        bank
    }

    /// Loads every `*.json` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ProblemError> {
        let io = |source| ProblemError::Io { path: dir.to_path_buf(), source };
        let mut bank = ProblemBank::default();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|source| ProblemError::Io { path: path.clone(), source })?;
            let problem = parse(&text, &path)?;
            if bank.problems.contains_key(&problem.id) {
                return Err(ProblemError::Invalid { path, reason: format!("duplicate problem id {}", problem.id) });
            }
            bank.problems.insert(problem.id.clone(), problem);
        }
        Ok(bank)
    }

    pub fn insert(&mut self, problem: Problem) {
        self.problems.insert(problem.id.clone(), problem);
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Problem> {
        self.problems.values()
    }
}

fn parse(text: &str, path: &Path) -> Result<Problem, ProblemError> {
    let invalid = |reason: String| ProblemError::Invalid { path: path.to_path_buf(), reason };
    let problem: Problem = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if problem.tests.is_empty() {
        return Err(invalid("a problem needs at least one test".into()));
    }
    if !is_identifier(&problem.entry_point) {
        return Err(invalid(format!("entry point {:?} is not an identifier", problem.entry_point)));
    }
    dbox_core::mapping::CommentStyle::named(&problem.comment_style).map_err(|e| invalid(e.to_string()))?;
    Ok(problem)
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

//! Prompt templates.
//!
//! Templates are versioned TOML assets, one per pipeline, with `{{name}}`
//! placeholders. The engine only ever binds values into them; it owns no
//! prompt prose of its own.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    FromCode,
    FromStepTree,
    CopyToComments,
    CheckMatch,
    /// Feedback appended to a request after a malformed reply.
    RetryFeedback,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::FromCode,
        Pipeline::FromStepTree,
        Pipeline::CopyToComments,
        Pipeline::CheckMatch,
        Pipeline::RetryFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::FromCode => "from_code",
            Pipeline::FromStepTree => "from_step_tree",
            Pipeline::CopyToComments => "copy_to_comments",
            Pipeline::CheckMatch => "check_match",
            Pipeline::RetryFeedback => "retry_feedback",
        }
    }

    /// Placeholders a template for this pipeline may use.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Pipeline::FromCode => &["problem", "code", "tree"],
            Pipeline::FromStepTree => &["problem", "tree"],
            Pipeline::CopyToComments | Pipeline::CheckMatch => &["problem", "tree", "code"],
            Pipeline::RetryFeedback => &["raw", "errors"],
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {0} is missing")]
    Missing(Pipeline),
    #[error("template {name}: unknown placeholder {{{{{placeholder}}}}}")]
    UnknownPlaceholder { name: Pipeline, placeholder: String },
    #[error("template {name}: placeholder {{{{{placeholder}}}}} left unbound")]
    Unbound { name: Pipeline, placeholder: String },
    #[error("template file {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("template file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("template file {path} declares pipeline {declared}")]
    NameMismatch { path: String, declared: Pipeline },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub name: Pipeline,
    pub version: String,
    #[serde(default)]
    pub system: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(source: &str, origin: &str) -> Result<Self, TemplateError> {
        let template: PromptTemplate = toml::from_str(source)
            .map_err(|source| TemplateError::Parse { path: origin.to_string(), source })?;
        template.check_placeholders()?;
        Ok(template)
    }

    fn check_placeholders(&self) -> Result<(), TemplateError> {
        let allowed = self.name.placeholders();
        for text in [&self.system, &self.body] {
            for placeholder in placeholders(text) {
                if !allowed.contains(&placeholder) {
                    return Err(TemplateError::UnknownPlaceholder {
                        name: self.name,
                        placeholder: placeholder.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Substitutes every placeholder in a single pass; bound values are not
    /// themselves scanned for placeholders.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<RenderedPrompt, TemplateError> {
        Ok(RenderedPrompt {
            system: substitute(self.name, &self.system, bindings)?,
            user: substitute(self.name, &self.body, bindings)?,
        })
    }
}

/// Names of `{{placeholder}}` markers in `text`, in order of appearance.
pub fn placeholders(text: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_identifier(&after[..close]) => {
                found.push(&after[..close]);
                rest = &after[close + 2..];
            }
            _ => rest = &rest[open + 1..],
        }
    }
    found
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

fn substitute(
    name: Pipeline,
    text: &str,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_identifier(&after[..close]) => {
                let key = &after[..close];
                let value = bindings.get(key).ok_or_else(|| TemplateError::Unbound {
                    name,
                    placeholder: key.to_string(),
                })?;
                out.push_str(&rest[..open]);
                out.push_str(value);
                rest = &after[close + 2..];
            }
            _ => {
                out.push_str(&rest[..open + 1]);
                rest = &rest[open + 1..];
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// One template per pipeline.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<Pipeline, PromptTemplate>,
}

const BUNDLED: [(&str, &str); 5] = [
    ("from_code.toml", include_str!("../../assets/prompts/from_code.toml")),
    ("from_step_tree.toml", include_str!("../../assets/prompts/from_step_tree.toml")),
    ("copy_to_comments.toml", include_str!("../../assets/prompts/copy_to_comments.toml")),
    ("check_match.toml", include_str!("../../assets/prompts/check_match.toml")),
    ("retry_feedback.toml", include_str!("../../assets/prompts/retry_feedback.toml")),
];

impl TemplateSet {
    /// The templates shipped in `assets/prompts`.
    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|(file, source)| {
                let t = PromptTemplate::parse(source, file).expect("bundled templates are valid");
                (t.name, t)
            })
            .collect();
        TemplateSet { templates }
    }

    /// Loads `<pipeline>.toml` for every pipeline from `dir`. Files absent
    /// from the directory fall back to the bundled version.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::bundled();
        for pipeline in Pipeline::ALL {
            let path = dir.join(format!("{}.toml", pipeline.name()));
            if !path.exists() {
                continue;
            }
            let display = path.display().to_string();
            let source = std::fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { path: display.clone(), source })?;
            let template = PromptTemplate::parse(&source, &display)?;
            if template.name != pipeline {
                return Err(TemplateError::NameMismatch { path: display, declared: template.name });
            }
            set.templates.insert(pipeline, template);
        }
        Ok(set)
    }

    pub fn get(&self, pipeline: Pipeline) -> Result<&PromptTemplate, TemplateError> {
        self.templates.get(&pipeline).ok_or(TemplateError::Missing(pipeline))
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name, template);
    }
}

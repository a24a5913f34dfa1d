//! The four button pipelines.
//!
//! Each pipeline renders its template, calls the provider through the retry
//! loop, and turns the reply into engine types. Reply content is checked
//! against what was sent: records naming ids that were never sent are
//! dropped, sent ids that come back missing are reported, and line ranges are
//! clipped to the code. Every such repair is reported as an [`Anomaly`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::provider::{
    call_provider, LlmError, Provider, ProviderRequest, ResponseMode, DEFAULT_MAX_ATTEMPTS,
    DEFAULT_TEMPERATURE, DEFAULT_TIMEOUT,
};
use super::schema::{parse_response, RawLines, ResponseDoc, ResponseHints, ResponseNode, StatusRule};
use super::template::{Pipeline, TemplateSet};
use crate::anomaly::Anomaly;
use crate::mapping::{line_count, CodeMapping, LineRange};
use crate::steptree::{
    EvaluatedRecord, EvaluatedStatus, EvaluatedTree, FormationStatus, HintTexts,
    ImplementationStatus, InsertionHint, NodeId, Stage, StepNode, StepTree,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorConfig {
    pub model_id: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_attempts: u32,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            model_id: "scripted".into(),
            temperature: DEFAULT_TEMPERATURE,
            timeout: DEFAULT_TIMEOUT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

/// Per-call context: the problem statement bound into `{{problem}}` and an
/// optional correlation tag passed through to the provider.
#[derive(Debug, Clone, Copy)]
pub struct Brief<'a> {
    pub problem: &'a str,
    pub correlation: Option<&'a str>,
}

impl<'a> Brief<'a> {
    pub fn new(problem: &'a str) -> Self {
        Brief { problem, correlation: None }
    }

    pub fn tagged(mut self, correlation: &'a str) -> Self {
        self.correlation = Some(correlation);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub tree: EvaluatedTree,
    pub anomalies: Vec<Anomaly>,
    /// Attempt number of each accepted provider call, in call order.
    pub attempts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingOutcome {
    pub mapping: CodeMapping,
    pub anomalies: Vec<Anomaly>,
    pub attempts: Vec<u32>,
}

pub struct Orchestrator {
    provider: Arc<dyn Provider>,
    templates: TemplateSet,
    config: OrchestratorConfig,
}

impl Orchestrator {
    pub fn new(provider: Arc<dyn Provider>, templates: TemplateSet, config: OrchestratorConfig) -> Self {
        Orchestrator { provider, templates, config }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    async fn run(
        &self,
        brief: Brief<'_>,
        pipeline: Pipeline,
        mut bindings: BTreeMap<&str, String>,
        rule: StatusRule,
    ) -> Result<(ResponseDoc, u32), LlmError> {
        bindings.insert("problem", brief.problem.to_string());
        let prompt = self.templates.get(pipeline)?.render(&bindings)?;
        let request = ProviderRequest {
            model_id: self.config.model_id.clone(),
            temperature: self.config.temperature,
            response_mode: ResponseMode::StructuredObject,
            system_prompt: prompt.system,
            user_payload: prompt.user,
            timeout: self.config.timeout,
            pipeline,
            correlation: brief.correlation.map(str::to_string),
        };
        let response = call_provider(
            self.provider.as_ref(),
            &self.templates,
            &request,
            self.config.max_attempts,
            |raw| parse_response(raw, rule).map(|(value, _)| value),
        )
        .await?;
        let (_, doc) = parse_response(&response.raw, rule).expect("reply was validated");
        Ok((doc, response.attempt))
    }

    /// Infers a step tree from code in two calls: the first drafts steps with
    /// line references, the second judges the draft.
    ///
    /// `context` is the learner's current tree. Draft steps that reuse one
    /// of its ids are matched to that node; every other draft step comes back
    /// as a record without an id, carrying the drafted text and lines.
    pub async fn infer_tree_from_code(
        &self,
        brief: Brief<'_>,
        code: &str,
        context: &StepTree,
    ) -> Result<Evaluation, LlmError> {
        if code.trim().is_empty() {
            return Err(LlmError::EmptyCode);
        }
        let count = line_count(code);
        let mut anomalies = Vec::new();
        let bindings = BTreeMap::from([
            ("code", number_lines(code)),
            ("tree", tree_view(context)),
        ]);
        let (draft_doc, first) = self.run(brief, Pipeline::FromCode, bindings, StatusRule::Any).await?;

        let mut drafter = Drafter {
            context,
            count,
            budget: context.limits().max_nodes,
            used: HashSet::new(),
            drafts: HashMap::new(),
            next: 0,
            anomalies: &mut anomalies,
        };
        let draft_view = drafter.draft_list(&draft_doc.nodes);
        let drafts = std::mem::take(&mut drafter.drafts);
        let sent: Vec<String> = draft_view.iter().flat_map(PromptNode::ids).collect();

        let bindings = BTreeMap::from([("tree", to_json(&PromptTree { steps: draft_view }))]);
        let (doc, second) = self
            .run(brief, Pipeline::FromStepTree, bindings, StatusRule::Formation)
            .await?;

        let mut resolver = Resolver::new(context, Kind::Formation, sent, Some(count));
        resolver.drafts = drafts;
        let records = resolver.convert_list(&doc.nodes, Scope::Root);
        anomalies.extend(resolver.finish());
        Ok(Evaluation { tree: EvaluatedTree { records }, anomalies, attempts: vec![first, second] })
    }

    /// Judges every node of a learner-built tree.
    pub async fn evaluate_tree(&self, brief: Brief<'_>, tree: &StepTree) -> Result<Evaluation, LlmError> {
        let bindings = BTreeMap::from([("tree", tree_view(tree))]);
        let (doc, attempt) = self
            .run(brief, Pipeline::FromStepTree, bindings, StatusRule::Formation)
            .await?;
        let sent = tree.nodes().map(|n| n.id.as_str().to_string()).collect();
        let mut resolver = Resolver::new(tree, Kind::Formation, sent, None);
        let records = resolver.convert_list(&doc.nodes, Scope::Root);
        let anomalies = resolver.finish();
        Ok(Evaluation { tree: EvaluatedTree { records }, anomalies, attempts: vec![attempt] })
    }

    /// Asks which lines of `code` implement which nodes.
    pub async fn map_tree_to_code(
        &self,
        brief: Brief<'_>,
        tree: &StepTree,
        code: &str,
    ) -> Result<MappingOutcome, LlmError> {
        if tree.stage != Stage::Implementation {
            return Err(LlmError::WrongStage { expected: Stage::Implementation });
        }
        if code.trim().is_empty() {
            return Ok(MappingOutcome { mapping: CodeMapping::empty(code), anomalies: Vec::new(), attempts: Vec::new() });
        }
        let bindings = BTreeMap::from([("tree", tree_view(tree)), ("code", number_lines(code))]);
        let (doc, attempt) = self
            .run(brief, Pipeline::CopyToComments, bindings, StatusRule::Any)
            .await?;
        let sent = tree.nodes().map(|n| n.id.as_str().to_string()).collect();
        let mut resolver = Resolver::new(tree, Kind::Mapping, sent, Some(line_count(code)));
        let records = resolver.convert_list(&doc.nodes, Scope::Root);
        let anomalies = resolver.finish();
        let eval = EvaluatedTree { records };
        let ranges = eval
            .walk()
            .filter_map(|r| Some((r.matched_node_id.clone()?, r.lines.clone())));
        let mapping = CodeMapping::from_ranges(code, ranges);
        Ok(MappingOutcome { mapping, anomalies, attempts: vec![attempt] })
    }

    /// Classifies every node as implemented, incorrectly implemented or still
    /// to be coded.
    pub async fn check_match(
        &self,
        brief: Brief<'_>,
        tree: &StepTree,
        code: &str,
    ) -> Result<Evaluation, LlmError> {
        if tree.stage != Stage::Implementation {
            return Err(LlmError::WrongStage { expected: Stage::Implementation });
        }
        let bindings = BTreeMap::from([("tree", tree_view(tree)), ("code", number_lines(code))]);
        let (doc, attempt) = self
            .run(brief, Pipeline::CheckMatch, bindings, StatusRule::Implementation)
            .await?;
        let sent = tree.nodes().map(|n| n.id.as_str().to_string()).collect();
        let mut resolver = Resolver::new(tree, Kind::Implementation, sent, Some(line_count(code)));
        let records = resolver.convert_list(&doc.nodes, Scope::Root);
        let anomalies = resolver.finish();
        Ok(Evaluation { tree: EvaluatedTree { records }, anomalies, attempts: vec![attempt] })
    }
}

/// Code as sent to the model: every line prefixed with its 1-based number.
pub fn number_lines(code: &str) -> String {
    code.split('\n')
        .take(line_count(code))
        .enumerate()
        .map(|(i, line)| format!("{:>4} | {}", i + 1, line.strip_suffix('\r').unwrap_or(line)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Serialize)]
struct PromptTree {
    steps: Vec<PromptNode>,
}

/// What the model sees of a node: no statuses, no hints.
#[derive(Debug, Clone, Serialize)]
struct PromptNode {
    id: String,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lines: Option<Vec<LineRange>>,
    children: Vec<PromptNode>,
}

impl PromptNode {
    fn from_node(node: &StepNode) -> Self {
        PromptNode {
            id: node.id.as_str().to_string(),
            text: node.text.clone(),
            lines: None,
            children: node.children.iter().map(PromptNode::from_node).collect(),
        }
    }

    fn ids(&self) -> Vec<String> {
        let mut out = vec![self.id.clone()];
        out.extend(self.children.iter().flat_map(PromptNode::ids));
        out
    }
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("prompt views serialize")
}

/// Tree as sent to the model.
pub fn tree_view(tree: &StepTree) -> String {
    to_json(&PromptTree { steps: tree.roots.iter().map(PromptNode::from_node).collect() })
}

#[derive(Debug, Clone)]
struct Draft {
    text: String,
    lines: Vec<LineRange>,
}

/// Turns a from-code reply into the draft tree sent for judgment. Steps
/// that reuse a context id keep it; the rest get temporary `d<k>` ids.
struct Drafter<'a> {
    context: &'a StepTree,
    count: usize,
    budget: usize,
    used: HashSet<String>,
    drafts: HashMap<String, Draft>,
    next: usize,
    anomalies: &'a mut Vec<Anomaly>,
}

impl Drafter<'_> {
    fn draft_list(&mut self, nodes: &[ResponseNode]) -> Vec<PromptNode> {
        let mut out = Vec::new();
        for node in nodes {
            if self.budget == 0 {
                self.anomalies.push(Anomaly::NodeLimitReached);
                return out;
            }
            self.budget -= 1;
            let reused = node
                .id
                .as_deref()
                .filter(|id| self.context.contains(&NodeId::new(*id)) && !self.used.contains(*id));
            let (id, text) = match reused {
                Some(id) => {
                    let existing = self.context.node(&NodeId::new(id)).expect("checked above");
                    (id.to_string(), existing.text.clone())
                }
                None => (self.mint(), node.text.trim().to_string()),
            };
            self.used.insert(id.clone());
            let lines = node
                .lines
                .as_ref()
                .map(|raw| clip_lines(&NodeId::new(id.as_str()), raw, self.count, self.anomalies))
                .unwrap_or_default();
            if reused.is_none() {
                self.drafts.insert(id.clone(), Draft { text: text.clone(), lines: lines.clone() });
            }
            let children = self.draft_list(&node.children);
            out.push(PromptNode {
                id,
                text,
                lines: (!lines.is_empty()).then_some(lines),
                children,
            });
        }
        out
    }

    fn mint(&mut self) -> String {
        loop {
            self.next += 1;
            let id = format!("d{}", self.next);
            if !self.context.contains(&NodeId::new(id.as_str())) {
                return id;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Formation,
    Implementation,
    /// Line references only; statuses are ignored.
    Mapping,
}

#[derive(Debug, Clone, Copy)]
enum Scope<'a> {
    Root,
    Under(&'a NodeId),
    InsideNew,
}

/// Converts reply nodes into evaluated records, applying the id repair
/// policy.
struct Resolver<'a> {
    tree: &'a StepTree,
    kind: Kind,
    sent: Vec<String>,
    sent_set: HashSet<String>,
    count: Option<usize>,
    drafts: HashMap<String, Draft>,
    seen: HashSet<String>,
    anomalies: Vec<Anomaly>,
}

impl<'a> Resolver<'a> {
    fn new(tree: &'a StepTree, kind: Kind, sent: Vec<String>, count: Option<usize>) -> Self {
        Resolver {
            tree,
            kind,
            sent_set: sent.iter().cloned().collect(),
            sent,
            count,
            drafts: HashMap::new(),
            seen: HashSet::new(),
            anomalies: Vec::new(),
        }
    }

    fn convert_list(&mut self, nodes: &[ResponseNode], scope: Scope<'_>) -> Vec<EvaluatedRecord> {
        let mut out = Vec::new();
        for node in nodes {
            match node.id.as_deref() {
                Some(id) if self.sent_set.contains(id) && self.seen.insert(id.to_string()) => {
                    let record = match self.drafts.get(id).cloned() {
                        Some(draft) => self.draft_record(node, id, draft, scope, &out),
                        None => self.matched_record(node, id),
                    };
                    out.push(record);
                }
                Some(id) => {
                    if self.sent_set.contains(id) {
                        self.anomalies.push(Anomaly::DuplicateRecord { node: NodeId::new(id) });
                    } else {
                        self.anomalies.push(Anomaly::InventedRecord {
                            id: Some(id.to_string()),
                            text: node.text.clone(),
                        });
                    }
                    let spliced = self.convert_list(&node.children, scope);
                    out.extend(spliced);
                }
                None if self.kind == Kind::Formation => {
                    let hint = self.explicit_position(node.insert_after.as_deref(), scope, &out);
                    let mut record = EvaluatedRecord::missing(hint);
                    record.divisible = node.divisible;
                    record.hints = hint_texts(node.hints.as_ref());
                    record.children = self.convert_list(&node.children, Scope::InsideNew);
                    out.push(record);
                }
                None => {
                    self.anomalies.push(Anomaly::InventedRecord { id: None, text: node.text.clone() });
                    let spliced = self.convert_list(&node.children, scope);
                    out.extend(spliced);
                }
            }
        }
        out
    }

    fn status(&self, node: &ResponseNode) -> EvaluatedStatus {
        match self.kind {
            Kind::Formation => EvaluatedStatus::Formation(
                node.status.and_then(|s| s.formation()).unwrap_or(FormationStatus::Unchecked),
            ),
            Kind::Implementation | Kind::Mapping => EvaluatedStatus::Implementation(
                node.status
                    .and_then(|s| s.implementation())
                    .unwrap_or(ImplementationStatus::NotChecked),
            ),
        }
    }

    fn lines(&mut self, id: &NodeId, raw: Option<&RawLines>) -> Vec<LineRange> {
        match (self.count, raw) {
            (Some(count), Some(raw)) => clip_lines(id, raw, count, &mut self.anomalies),
            _ => Vec::new(),
        }
    }

    fn matched_record(&mut self, node: &ResponseNode, id: &str) -> EvaluatedRecord {
        let id = NodeId::new(id);
        let lines = self.lines(&id, node.lines.as_ref());
        let children = self.convert_list(&node.children, Scope::Under(&id));
        EvaluatedRecord {
            matched_node_id: Some(id.clone()),
            text: node.text.clone(),
            status: self.status(node),
            divisible: node.divisible,
            hints: hint_texts(node.hints.as_ref()),
            lines,
            insertion_hint: None,
            children,
        }
    }

    /// A drafted step being judged: a new record carrying the drafted text.
    fn draft_record(
        &mut self,
        node: &ResponseNode,
        id: &str,
        draft: Draft,
        scope: Scope<'_>,
        preceding: &[EvaluatedRecord],
    ) -> EvaluatedRecord {
        let lines = match &node.lines {
            Some(raw) => self.lines(&NodeId::new(id), Some(raw)),
            None => draft.lines,
        };
        EvaluatedRecord {
            matched_node_id: None,
            text: draft.text,
            status: self.status(node),
            divisible: node.divisible,
            hints: hint_texts(node.hints.as_ref()),
            lines,
            insertion_hint: self.positional(scope, preceding),
            children: self.convert_list(&node.children, Scope::InsideNew),
        }
    }

    /// Position of a missing record. An `insertAfter` naming an existing
    /// node wins; one naming anything else is unusable. Without it, a record
    /// nested under an echoed node goes after its nearest preceding echoed
    /// sibling, and a top-level record has no position.
    fn explicit_position(
        &self,
        insert_after: Option<&str>,
        scope: Scope<'_>,
        preceding: &[EvaluatedRecord],
    ) -> Option<InsertionHint> {
        if let Some(after) = insert_after {
            let after = NodeId::new(after);
            let parent = self.tree.parent_of(&after)?;
            let siblings = self.tree.children_of(parent.as_ref())?;
            let index = siblings.iter().position(|n| n.id == after)? + 1;
            return Some(InsertionHint { parent, index });
        }
        match scope {
            Scope::Under(_) => self.positional(scope, preceding),
            Scope::Root | Scope::InsideNew => None,
        }
    }

    fn positional(&self, scope: Scope<'_>, preceding: &[EvaluatedRecord]) -> Option<InsertionHint> {
        let parent = match scope {
            Scope::Root => None,
            Scope::Under(id) => Some(id.clone()),
            Scope::InsideNew => return None,
        };
        let siblings = self.tree.children_of(parent.as_ref())?;
        let index = preceding
            .iter()
            .rev()
            .filter_map(|r| r.matched_node_id.as_ref())
            .find_map(|id| siblings.iter().position(|n| &n.id == id))
            .map_or(0, |i| i + 1);
        Some(InsertionHint { parent, index })
    }

    /// Reports sent ids that never came back.
    fn finish(mut self) -> Vec<Anomaly> {
        for id in &self.sent {
            if !self.seen.contains(id) {
                self.anomalies.push(Anomaly::UnmatchedNode { node: NodeId::new(id.as_str()) });
            }
        }
        self.anomalies
    }
}

fn hint_texts(hints: Option<&ResponseHints>) -> HintTexts {
    let keep = |text: &Option<String>| text.as_ref().filter(|t| !t.trim().is_empty()).cloned();
    match hints {
        None => HintTexts::default(),
        Some(h) => HintTexts {
            general: keep(&h.general),
            detailed: keep(&h.detailed),
            reveal: keep(&h.reveal),
        },
    }
}

/// Keeps ranges inside `1..=count`. A range that overlaps the code is
/// clipped to it; one that lies entirely outside, or is reversed, is
/// dropped. Either repair is reported.
pub fn clip_lines(node: &NodeId, raw: &RawLines, count: usize, anomalies: &mut Vec<Anomaly>) -> Vec<LineRange> {
    let last = count as i64;
    let mut kept = Vec::new();
    for (start, end) in raw.pairs() {
        if 1 <= start && start <= end && end <= last {
            kept.push(LineRange::new(start as usize, end as usize));
            continue;
        }
        let (from, to) = (start.max(1), end.min(last));
        let clipped = start <= end && from <= to;
        if clipped {
            kept.push(LineRange::new(from as usize, to as usize));
        }
        anomalies.push(Anomaly::RangeOutOfBounds {
            node: node.clone(),
            start,
            end,
            line_count: count,
            clipped,
        });
    }
    kept
}

//! Session service: the state machine behind every endpoint.
//!
//! Each session sits behind its own async mutex. Provider and runner calls
//! run without that lock held: a check snapshots the tree, releases the
//! lock, waits for the provider, then relocks and applies the answer only if
//! the content the provider saw is still current.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::Utc;
use dbox_core::llm::{Brief, LlmError, Orchestrator};
use dbox_core::mapping::{insert_comments, strip_comments, CodeMapping, CodeRevision, CommentError, CommentStyle};
use dbox_core::steptree::{
    EvaluatedTree, FormationStatus, HintLevel, HintView, ImplementationStatus, NodeId, Stage, StepNode, StepTree, TreeError,
};
use dbox_core::Anomaly;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{json, Value};
use thiserror::Error;

use crate::events::{Clock, Event, EventKind};
use crate::problem::{Problem, ProblemBank, PublicProblem};
use crate::runner::{RunResult, Runner, RunnerError};
use crate::store::{Session, Store, StoreError};

pub const DEFAULT_CHECK_INTERVAL: Duration = Duration::from_secs(1);
pub const MAX_CODE_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Minimum spacing between provider-backed checks of one session.
    pub check_interval: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { check_interval: DEFAULT_CHECK_INTERVAL }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown problem {0}")]
    UnknownProblem(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("another check is already running for this session")]
    Busy,
    #[error("checks are limited to one per {interval_ms} ms; retry in {retry_after_ms} ms")]
    RateLimited { interval_ms: u64, retry_after_ms: u64 },
    #[error("the tree or code changed while the provider was answering; result discarded")]
    Stale(Anomaly),
    #[error("code is empty")]
    EmptyCode,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Comments(#[from] CommentError),
    #[error("{message}")]
    Provider { kind: &'static str, message: String, anomaly_id: String },
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownProblem(_) => "unknownProblem",
            ServiceError::UnknownSession(_) => "unknownSession",
            ServiceError::Busy => "busy",
            ServiceError::RateLimited { .. } => "rateLimited",
            ServiceError::Stale(_) => "staleResult",
            ServiceError::EmptyCode => "emptyCode",
            ServiceError::Tree(e) => tree_error_kind(e),
            ServiceError::Comments(CommentError::WrongStage) => "wrongStage",
            ServiceError::Comments(CommentError::UnknownCommentStyle(_)) => "unknownCommentStyle",
            ServiceError::Provider { kind, .. } => kind,
            ServiceError::Runner(_) => "runnerUnavailable",
            ServiceError::Store(_) => "storage",
            ServiceError::BadRequest(_) => "badRequest",
        }
    }

    fn provider(error: LlmError) -> Self {
        match error {
            LlmError::EmptyCode => ServiceError::EmptyCode,
            LlmError::WrongStage { expected } => ServiceError::Tree(TreeError::WrongStage { expected }),
            other => {
                let anomaly_id = uuid::Uuid::new_v4().to_string();
                tracing::error!(anomaly_id, kind = other.kind(), error = %other, "provider call failed");
                ServiceError::Provider { kind: other.kind(), message: other.to_string(), anomaly_id }
            }
        }
    }
}

pub fn tree_error_kind(error: &TreeError) -> &'static str {
    match error {
        TreeError::UnknownParent(_) => "unknownParent",
        TreeError::UnknownNode(_) => "unknownNode",
        TreeError::DepthLimitExceeded(_) => "depthLimitExceeded",
        TreeError::NodeLimitExceeded(_) => "nodeLimitExceeded",
        TreeError::WrongStage { .. } => "wrongStage",
        TreeError::InvalidIndex { .. } => "invalidIndex",
        TreeError::InvalidCount => "invalidCount",
        TreeError::CycleCreated => "cycleCreated",
        TreeError::NodeLocked(_) => "nodeLocked",
        TreeError::NotAllCorrect => "notAllCorrect",
        TreeError::TreeNotEmpty => "treeNotEmpty",
        TreeError::UnknownMatchedId(_) => "unknownMatchedId",
        TreeError::StructureFrozen => "structureFrozen",
        TreeError::StatusKindMismatch => "statusKindMismatch",
        TreeError::NodeNotEligible(_) => "nodeNotEligible",
        TreeError::HintNotYetAvailable { .. } => "hintNotYetAvailable",
        TreeError::HintContentMissing(_) => "hintContentMissing",
    }
}

/// One learner edit inside a `PUT /tree` batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", deny_unknown_fields)]
pub enum TreeOp {
    /// `index` defaults to the end of the parent's children.
    Add {
        #[serde(default)]
        parent: Option<NodeId>,
        #[serde(default)]
        index: Option<usize>,
        text: String,
    },
    Split { node: NodeId, count: usize },
    Move {
        node: NodeId,
        #[serde(default)]
        parent: Option<NodeId>,
        index: usize,
    },
    Delete { node: NodeId },
    EditText { node: NodeId, text: String },
}

fn apply_op(tree: &mut StepTree, op: &TreeOp) -> Result<Vec<NodeId>, TreeError> {
    match op {
        TreeOp::Add { parent, index, text } => {
            let index = match index {
                Some(i) => *i,
                None => match parent {
                    None => tree.roots.len(),
                    Some(p) => tree.node(p).ok_or_else(|| TreeError::UnknownParent(p.clone()))?.children.len(),
                },
            };
            Ok(vec![tree.add_step(parent.as_ref(), index, text)?])
        }
        TreeOp::Split { node, count } => tree.split_step(node, *count),
        TreeOp::Move { node, parent, index } => tree.move_step(node, parent.as_ref(), *index).map(|_| Vec::new()),
        TreeOp::Delete { node } => tree.delete_step(node).map(|_| Vec::new()),
        TreeOp::EditText { node, text } => tree.edit_text(node, text).map(|_| Vec::new()),
    }
}

/// Wire bytes of a tree as a learner may see it: hint rungs above the
/// highest one granted are blanked, so the answer to a step cannot be read
/// off the response before the gate opens.
pub fn learner_wire(tree: &StepTree) -> Box<RawValue> {
    fn redact(nodes: &mut [StepNode]) {
        for node in nodes {
            let viewed = node.hints.highest_level_viewed;
            if viewed < 1 {
                node.hints.general = None;
            }
            if viewed < 2 {
                node.hints.detailed = None;
            }
            if viewed < 3 {
                node.hints.reveal = None;
            }
            redact(&mut node.children);
        }
    }
    let mut view = tree.clone();
    redact(&mut view.roots);
    RawValue::from_string(view.to_wire_json()).expect("wire JSON is valid")
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub id: String,
    pub problem_id: String,
    pub created_at: chrono::DateTime<Utc>,
    pub tree: Box<RawValue>,
    pub code: String,
    pub mapping: Option<CodeMapping>,
}

impl SessionView {
    fn of(session: &Session) -> Self {
        SessionView {
            id: session.id.clone(),
            problem_id: session.problem_id.clone(),
            created_at: session.created_at,
            tree: learner_wire(&session.tree),
            code: session.code.clone(),
            mapping: session.mapping.clone(),
        }
    }
}

/// Reply of every endpoint that changes the tree.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TreeReply {
    pub tree: Box<RawValue>,
    pub anomalies: Vec<Anomaly>,
    /// Ids of nodes this call created.
    pub created: Vec<NodeId>,
    /// The tree moved from formation to implementation during this call.
    pub advanced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adopted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<CodeMapping>,
}

impl TreeReply {
    fn new(tree: &StepTree, anomalies: Vec<Anomaly>, created: Vec<NodeId>) -> Self {
        TreeReply {
            tree: learner_wire(tree),
            anomalies: dedupe(anomalies),
            created,
            advanced: false,
            adopted: None,
            code: None,
            mapping: None,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HintReply {
    pub hint: HintView,
    pub tree: Box<RawValue>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CodeReply {
    pub code_revision: CodeRevision,
    /// Whether the stored mapping still matches the new code.
    pub mapping_fresh: bool,
}

fn dedupe(anomalies: Vec<Anomaly>) -> Vec<Anomaly> {
    let mut out: Vec<Anomaly> = Vec::with_capacity(anomalies.len());
    for anomaly in anomalies {
        if !out.contains(&anomaly) {
            out.push(anomaly);
        }
    }
    out
}

fn status_counts(tree: &StepTree) -> Value {
    match tree.stage {
        Stage::Formation => {
            let count = |s: FormationStatus| tree.nodes().filter(|n| n.formation_status == s).count();
            json!({
                "correct": count(FormationStatus::Correct),
                "incorrect": count(FormationStatus::Incorrect),
                "missing": count(FormationStatus::Missing),
                "unchecked": count(FormationStatus::Unchecked),
            })
        }
        Stage::Implementation => {
            let count = |s: ImplementationStatus| tree.nodes().filter(|n| n.impl_status == s).count();
            json!({
                "implemented": count(ImplementationStatus::Implemented),
                "incorrectlyImplemented": count(ImplementationStatus::IncorrectlyImplemented),
                "toBeCoded": count(ImplementationStatus::ToBeCoded),
                "notChecked": count(ImplementationStatus::NotChecked),
            })
        }
    }
}

/// Moves a fully correct formation tree on to implementation.
fn auto_advance(tree: &mut StepTree) -> bool {
    tree.stage == Stage::Formation && tree.all_correct() && tree.advance_stage().is_ok()
}

fn mapping_from(code: &str, eval: &EvaluatedTree) -> CodeMapping {
    CodeMapping::from_ranges(
        code,
        eval.walk().filter_map(|r| Some((r.matched_node_id.clone()?, r.lines.clone()))),
    )
}

struct Slot {
    state: tokio::sync::Mutex<Session>,
    busy: AtomicBool,
    last_check: Mutex<Option<Instant>>,
}

impl Slot {
    fn new(session: Session) -> Arc<Self> {
        Arc::new(Slot {
            state: tokio::sync::Mutex::new(session),
            busy: AtomicBool::new(false),
            last_check: Mutex::new(None),
        })
    }
}

/// Clears the busy flag when a check ends, however it ends.
struct CheckGuard(Arc<Slot>);

impl Drop for CheckGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

/// What the provider is shown.
struct Snapshot {
    tree: StepTree,
    code: String,
    problem: Problem,
}

type Applied<R> = (EventKind, Value, R);

pub struct SessionService {
    problems: ProblemBank,
    orchestrator: Arc<Orchestrator>,
    runner: Arc<dyn Runner>,
    store: Mutex<Store>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    clock: Clock,
    config: ServiceConfig,
}

impl SessionService {
    pub fn new(
        problems: ProblemBank,
        orchestrator: Arc<Orchestrator>,
        runner: Arc<dyn Runner>,
        store: Store,
        loaded: Vec<Session>,
        config: ServiceConfig,
    ) -> Self {
        let newest = loaded.iter().flat_map(|s| s.events.iter().map(|e| e.t)).max();
        let sessions = loaded.into_iter().map(|s| (s.id.clone(), Slot::new(s))).collect();
        SessionService {
            problems,
            orchestrator,
            runner,
            store: Mutex::new(store),
            sessions: RwLock::new(sessions),
            clock: Clock::after(newest),
            config,
        }
    }

    pub fn problems(&self) -> &ProblemBank {
        &self.problems
    }

    pub fn problem(&self, id: &str) -> Result<PublicProblem, ServiceError> {
        Ok(self.problem_full(id)?.public_view())
    }

    fn problem_full(&self, id: &str) -> Result<&Problem, ServiceError> {
        self.problems.get(id).ok_or_else(|| ServiceError::UnknownProblem(id.to_string()))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        let sessions = self.sessions.read().expect("session map lock");
        sessions.get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn create_session(&self, problem_id: &str) -> Result<SessionView, ServiceError> {
        let problem = self.problem_full(problem_id)?;
        let session = Session {
            id: uuid::Uuid::new_v4().to_string(),
            problem_id: problem.id.clone(),
            created_at: self.clock.now(),
            tree: StepTree::new(problem.id.clone()),
            code: problem.starter_code.clone(),
            mapping: None,
            events: Vec::new(),
        };
        self.store.lock().expect("store lock").commit(&session, None)?;
        let view = SessionView::of(&session);
        self.sessions.write().expect("session map lock").insert(session.id.clone(), Slot::new(session));
        Ok(view)
    }

    pub async fn session(&self, id: &str) -> Result<SessionView, ServiceError> {
        let slot = self.slot(id)?;
        let session = slot.state.lock().await;
        Ok(SessionView::of(&session))
    }

    pub async fn events(&self, id: &str) -> Result<Vec<Event>, ServiceError> {
        let slot = self.slot(id)?;
        let session = slot.state.lock().await;
        Ok(session.events.clone())
    }

    /// Applies `apply` to a copy of the session, persists the copy with the
    /// event it produced, then makes it current.
    fn commit<R>(
        &self,
        session: &mut Session,
        apply: impl FnOnce(&mut Session) -> Result<Applied<R>, ServiceError>,
    ) -> Result<R, ServiceError> {
        let mut next = session.clone();
        let (kind, payload, value) = apply(&mut next)?;
        let event = Event { t: self.clock.now(), kind, payload };
        next.events.push(event.clone());
        self.store.lock().expect("store lock").commit(&next, Some(&event))?;
        *session = next;
        Ok(value)
    }

    async fn mutate<R>(
        &self,
        id: &str,
        apply: impl FnOnce(&mut Session) -> Result<Applied<R>, ServiceError>,
    ) -> Result<R, ServiceError> {
        let slot = self.slot(id)?;
        let mut session = slot.state.lock().await;
        self.commit(&mut session, apply)
    }

    /// Claims the session for one provider-backed check.
    async fn begin_check(&self, id: &str, stage: Stage, needs_code: bool) -> Result<(CheckGuard, Snapshot), ServiceError> {
        let slot = self.slot(id)?;
        if slot.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
            return Err(ServiceError::Busy);
        }
        let guard = CheckGuard(slot.clone());
        let session = slot.state.lock().await;
        if session.tree.stage != stage {
            return Err(TreeError::WrongStage { expected: stage }.into());
        }
        if needs_code && session.code.trim().is_empty() {
            return Err(ServiceError::EmptyCode);
        }
        let problem = self.problem_full(&session.problem_id)?.clone();
        {
            let mut last = slot.last_check.lock().expect("rate limit lock");
            let interval = self.config.check_interval;
            if let Some(elapsed) = last.map(|t| t.elapsed()).filter(|e| *e < interval) {
                return Err(ServiceError::RateLimited {
                    interval_ms: interval.as_millis() as u64,
                    retry_after_ms: (interval - elapsed).as_millis() as u64 + 1,
                });
            }
            *last = Some(Instant::now());
        }
        let snapshot = Snapshot { tree: session.tree.clone(), code: session.code.clone(), problem };
        Ok((guard, snapshot))
    }

    /// Applies a provider answer if the session still shows what the provider
    /// was shown.
    async fn finish_check<R>(
        &self,
        guard: &CheckGuard,
        snapshot: &Snapshot,
        compare_code: bool,
        apply: impl FnOnce(&mut Session) -> Result<Applied<R>, ServiceError>,
    ) -> Result<R, ServiceError> {
        let mut session = guard.0.state.lock().await;
        let moved = session.tree.content_fingerprint() != snapshot.tree.content_fingerprint()
            || (compare_code && session.code != snapshot.code);
        if moved {
            let anomaly = Anomaly::StaleResult {
                sent_revision: snapshot.tree.revision,
                current_revision: session.tree.revision,
            };
            tracing::warn!(session = %session.id, %anomaly, "discarding stale provider result");
            return Err(ServiceError::Stale(anomaly));
        }
        self.commit(&mut session, apply)
    }

    pub async fn check_step_tree(&self, id: &str) -> Result<TreeReply, ServiceError> {
        let (guard, snap) = self.begin_check(id, Stage::Formation, false).await?;
        let brief = snap.problem.brief();
        let eval = self
            .orchestrator
            .evaluate_tree(Brief::new(&brief).tagged(id), &snap.tree)
            .await
            .map_err(ServiceError::provider)?;
        self.finish_check(&guard, &snap, false, |session| {
            let rec = session.tree.reconcile(&eval.tree)?;
            let advanced = auto_advance(&mut session.tree);
            let mut anomalies = eval.anomalies.clone();
            anomalies.extend(rec.anomalies);
            let payload = json!({
                "revision": session.tree.revision,
                "statuses": status_counts(&session.tree),
                "created": rec.created,
                "advanced": advanced,
                "anomalies": anomalies.len(),
                "attempts": eval.attempts,
            });
            let mut reply = TreeReply::new(&session.tree, anomalies, rec.created);
            reply.advanced = advanced;
            Ok((EventKind::CheckStepTree, payload, reply))
        })
        .await
    }

    pub async fn from_editor(&self, id: &str) -> Result<TreeReply, ServiceError> {
        let (guard, snap) = self.begin_check(id, Stage::Formation, true).await?;
        let brief = snap.problem.brief();
        let eval = self
            .orchestrator
            .infer_tree_from_code(Brief::new(&brief).tagged(id), &snap.code, &snap.tree)
            .await
            .map_err(ServiceError::provider)?;
        self.finish_check(&guard, &snap, true, |session| {
            let mut anomalies = eval.anomalies.clone();
            let adopted = session.tree.is_empty();
            let (created, mapping) = if adopted {
                let (assigned, extra) = session.tree.adopt(&eval.tree)?;
                anomalies.extend(extra);
                let ranges = eval.tree.walk().zip(&assigned).filter_map(|(r, id)| Some((id.clone()?, r.lines.clone())));
                (assigned.iter().flatten().cloned().collect::<Vec<_>>(), CodeMapping::from_ranges(&session.code, ranges))
            } else {
                let rec = session.tree.reconcile(&eval.tree)?;
                anomalies.extend(rec.anomalies);
                (rec.created, mapping_from(&session.code, &eval.tree))
            };
            session.mapping = Some(mapping.clone());
            let advanced = auto_advance(&mut session.tree);
            let payload = json!({
                "revision": session.tree.revision,
                "adopted": adopted,
                "statuses": status_counts(&session.tree),
                "created": created,
                "advanced": advanced,
                "anomalies": anomalies.len(),
                "codeRevision": CodeRevision::of(&session.code),
            });
            let mut reply = TreeReply::new(&session.tree, anomalies, created);
            reply.advanced = advanced;
            reply.adopted = Some(adopted);
            reply.mapping = Some(mapping);
            Ok((EventKind::FromEditorToStepTree, payload, reply))
        })
        .await
    }

    pub async fn copy_to_comments(&self, id: &str) -> Result<TreeReply, ServiceError> {
        let (guard, snap) = self.begin_check(id, Stage::Implementation, false).await?;
        let style = CommentStyle::named(&snap.problem.comment_style)?;
        let base = strip_comments(&snap.code, &style.marker);
        let brief = snap.problem.brief();
        let outcome = self
            .orchestrator
            .map_tree_to_code(Brief::new(&brief).tagged(id), &snap.tree, &base)
            .await
            .map_err(ServiceError::provider)?;
        self.finish_check(&guard, &snap, true, |session| {
            let annotated = insert_comments(&session.code, &session.tree, &style, Some(&outcome.mapping))?;
            session.code = annotated.code;
            session.mapping = annotated.mapping;
            let payload = json!({
                "comments": session.tree.len(),
                "mappedNodes": outcome.mapping.entries.len(),
                "anomalies": outcome.anomalies.len(),
                "codeRevision": CodeRevision::of(&session.code),
            });
            let mut reply = TreeReply::new(&session.tree, outcome.anomalies.clone(), Vec::new());
            reply.code = Some(session.code.clone());
            reply.mapping = session.mapping.clone();
            Ok((EventKind::CopyToComments, payload, reply))
        })
        .await
    }

    pub async fn check_match(&self, id: &str) -> Result<TreeReply, ServiceError> {
        let (guard, snap) = self.begin_check(id, Stage::Implementation, false).await?;
        let brief = snap.problem.brief();
        let eval = self
            .orchestrator
            .check_match(Brief::new(&brief).tagged(id), &snap.tree, &snap.code)
            .await
            .map_err(ServiceError::provider)?;
        self.finish_check(&guard, &snap, true, |session| {
            let rec = session.tree.apply_match_results(&eval.tree)?;
            let mut anomalies = eval.anomalies.clone();
            anomalies.extend(rec.anomalies);
            if eval.tree.walk().any(|r| !r.lines.is_empty()) {
                session.mapping = Some(mapping_from(&session.code, &eval.tree));
            }
            let payload = json!({
                "revision": session.tree.revision,
                "statuses": status_counts(&session.tree),
                "allImplemented": session.tree.all_implemented(),
                "anomalies": anomalies.len(),
                "codeRevision": CodeRevision::of(&session.code),
            });
            let mut reply = TreeReply::new(&session.tree, anomalies, Vec::new());
            reply.mapping = session.mapping.clone();
            Ok((EventKind::CheckMatch, payload, reply))
        })
        .await
    }

    pub async fn hint(&self, id: &str, node: &NodeId) -> Result<HintReply, ServiceError> {
        self.mutate(id, |session| {
            let hint = session.tree.request_hint(node)?;
            let kind = match hint.level {
                HintLevel::General => EventKind::HintGeneral,
                HintLevel::Detailed => EventKind::HintDetailed,
                HintLevel::Reveal => EventKind::HintReveal,
            };
            let payload = json!({
                "nodeId": node,
                "level": hint.level,
                "stage": session.tree.stage,
                "revealedNode": hint.revealed_node,
            });
            Ok((kind, payload, HintReply { hint, tree: learner_wire(&session.tree) }))
        })
        .await
    }

    pub async fn put_code(&self, id: &str, code: String) -> Result<CodeReply, ServiceError> {
        if code.len() > MAX_CODE_BYTES {
            return Err(ServiceError::BadRequest(format!("code exceeds {MAX_CODE_BYTES} bytes")));
        }
        self.mutate(id, move |session| {
            let revision = CodeRevision::of(&code);
            let payload = json!({
                "codeRevision": revision,
                "lines": dbox_core::mapping::line_count(&code),
                "bytes": code.len(),
            });
            session.code = code;
            let mapping_fresh = session.mapping.as_ref().is_some_and(|m| m.is_fresh_for(&session.code));
            Ok((EventKind::CodeEdit, payload, CodeReply { code_revision: revision, mapping_fresh }))
        })
        .await
    }

    /// Applies a batch of edits atomically: all of them or none.
    pub async fn edit_tree(&self, id: &str, ops: Vec<TreeOp>) -> Result<TreeReply, ServiceError> {
        if ops.is_empty() {
            return Err(ServiceError::BadRequest("no edit operations given".into()));
        }
        self.mutate(id, move |session| {
            let mut created = Vec::new();
            for op in &ops {
                created.extend(apply_op(&mut session.tree, op)?);
            }
            let payload = json!({
                "revision": session.tree.revision,
                "ops": ops,
                "created": created,
            });
            Ok((EventKind::TreeEdit, payload, TreeReply::new(&session.tree, Vec::new(), created)))
        })
        .await
    }

    pub async fn run(&self, id: &str) -> Result<RunResult, ServiceError> {
        let slot = self.slot(id)?;
        let (code, problem_id) = {
            let session = slot.state.lock().await;
            (session.code.clone(), session.problem_id.clone())
        };
        let problem = self.problem_full(&problem_id)?;
        let result = self.runner.run(problem, &code).await?;
        let mut session = slot.state.lock().await;
        let payload = json!({
            "allPassed": result.all_passed,
            "passed": result.per_test.iter().filter(|t| t.passed).count(),
            "total": result.per_test.len(),
            "timedOut": result.per_test.iter().filter(|t| t.timed_out).count(),
            "durationMs": result.duration_ms,
            "codeRevision": CodeRevision::of(&code),
        });
        self.commit(&mut session, |_| Ok((EventKind::RunCode, payload, result)))
    }
}

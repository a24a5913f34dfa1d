//! Merging provider judgments into the learner's tree.
//!
//! A provider answers with an [`EvaluatedTree`]. Reconciliation copies
//! statuses, flags and hint texts onto the nodes the provider echoed by id and
//! materializes blank `Missing` nodes for steps the provider says are absent.
//! Nothing else about the learner's tree changes: ids, texts, parents and
//! sibling order of existing nodes are left exactly as they were.

use std::collections::{HashMap, HashSet};

use crate::anomaly::Anomaly;
use crate::mapping::LineRange;

use super::{
    FormationStatus, HintLadder, ImplementationStatus, NodeFlags, NodeId, Stage, StepNode,
    StepTree, TreeError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatedStatus {
    Formation(FormationStatus),
    Implementation(ImplementationStatus),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HintTexts {
    pub general: Option<String>,
    pub detailed: Option<String>,
    pub reveal: Option<String>,
}

/// Where a new missing node goes: `index` counts positions in the parent's
/// children list as it was before reconciliation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertionHint {
    pub parent: Option<NodeId>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluatedRecord {
    pub matched_node_id: Option<NodeId>,
    pub text: String,
    pub status: EvaluatedStatus,
    pub divisible: bool,
    pub hints: HintTexts,
    pub lines: Vec<LineRange>,
    pub insertion_hint: Option<InsertionHint>,
    pub children: Vec<EvaluatedRecord>,
}

impl EvaluatedRecord {
    pub fn matched(id: NodeId, status: EvaluatedStatus) -> Self {
        EvaluatedRecord {
            matched_node_id: Some(id),
            text: String::new(),
            status,
            divisible: false,
            hints: HintTexts::default(),
            lines: Vec::new(),
            insertion_hint: None,
            children: Vec::new(),
        }
    }

    pub fn missing(insertion_hint: Option<InsertionHint>) -> Self {
        EvaluatedRecord {
            matched_node_id: None,
            text: String::new(),
            status: EvaluatedStatus::Formation(FormationStatus::Missing),
            divisible: false,
            hints: HintTexts::default(),
            lines: Vec::new(),
            insertion_hint,
            children: Vec::new(),
        }
    }

    pub fn walk(&self) -> impl Iterator<Item = &EvaluatedRecord> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let record = stack.pop()?;
            stack.extend(record.children.iter().rev());
            Some(record)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvaluatedTree {
    pub records: Vec<EvaluatedRecord>,
}

impl EvaluatedTree {
    /// Pre-order traversal over all records.
    pub fn walk(&self) -> impl Iterator<Item = &EvaluatedRecord> {
        self.records.iter().flat_map(EvaluatedRecord::walk)
    }

    pub fn matched_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.walk().filter_map(|r| r.matched_node_id.as_ref())
    }

    pub fn missing_count(&self) -> usize {
        self.walk().filter(|r| r.matched_node_id.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Reconciliation {
    pub anomalies: Vec<Anomaly>,
    /// Nodes materialized by this reconciliation, in creation order.
    pub created: Vec<NodeId>,
}

impl StepTree {
    /// Merges a formation-stage evaluation into the tree.
    ///
    /// Records without a matched id always become blank `Missing` nodes,
    /// whatever status or text the provider gave them. Existing nodes the
    /// provider did not echo keep their previous state.
    pub fn reconcile(&mut self, eval: &EvaluatedTree) -> Result<Reconciliation, TreeError> {
        self.require_stage(Stage::Formation)?;
        for record in eval.walk() {
            if let Some(id) = &record.matched_node_id {
                if !self.contains(id) {
                    return Err(TreeError::UnknownMatchedId(id.clone()));
                }
            }
            if !matches!(record.status, EvaluatedStatus::Formation(_)) {
                return Err(TreeError::StatusKindMismatch);
            }
        }

        let mut next = self.clone();
        let mut anomalies = Vec::new();
        let seen = apply_matched(&mut next, eval, &mut anomalies, |node, record| {
            let EvaluatedStatus::Formation(status) = record.status else { unreachable!() };
            node.formation_status = status;
            if status.is_failing() {
                node.hints.failed_attempts += 1;
            }
            node.flags.divisible = record.divisible;
            node.hints.refresh(&record.hints);
        });
        report_unmatched(self, &seen, &mut anomalies);

        let mut new_records = Vec::new();
        collect_new(&eval.records, &mut new_records);
        let mut ids = next.mint_ids(eval.missing_count()).into_iter();
        let mut budget = self.limits.max_nodes.saturating_sub(self.len());
        let mut created = Vec::new();
        let mut placed: HashMap<Option<NodeId>, Vec<(usize, StepNode)>> = HashMap::new();
        let mut fallback = Vec::new();

        for record in new_records {
            let position = record.insertion_hint.as_ref().and_then(|hint| {
                let siblings = self.children_of(hint.parent.as_ref())?;
                let parent_depth = match &hint.parent {
                    Some(p) => self.depth_of(p)?,
                    None => 0,
                };
                (hint.index <= siblings.len() && parent_depth < self.limits.max_depth)
                    .then_some((hint.clone(), self.limits.max_depth - parent_depth))
            });
            let levels = position.as_ref().map_or(self.limits.max_depth, |(_, levels)| *levels);
            let Some(node) = build_missing(record, levels, &mut budget, &mut ids, &mut anomalies)
            else {
                continue;
            };
            created.extend(node.walk().map(|n| n.id.clone()));
            match position {
                Some((hint, _)) => placed.entry(hint.parent).or_default().push((hint.index, node)),
                None => {
                    anomalies.push(Anomaly::InvalidInsertionPosition { created: node.id.clone() });
                    fallback.push(node);
                }
            }
        }

        for (parent, mut inserts) in placed {
            let siblings = next.children_mut(parent.as_ref()).expect("parent validated");
            let original = std::mem::take(siblings);
            let len = original.len();
            let mut original = original.into_iter();
            // stable sort keeps record order among equal indices
            inserts.sort_by_key(|(index, _)| *index);
            let mut inserts = inserts.into_iter().peekable();
            for position in 0..=len {
                while let Some((_, node)) = inserts.next_if(|(index, _)| *index == position) {
                    siblings.push(node);
                }
                if let Some(node) = original.next() {
                    siblings.push(node);
                }
            }
        }
        next.roots.extend(fallback);
        next.revision += 1;
        *self = next;
        Ok(Reconciliation { anomalies, created })
    }

    /// Applies an implementation-stage check. The structure is frozen, so any
    /// record that does not name an existing node is rejected.
    pub fn apply_match_results(&mut self, eval: &EvaluatedTree) -> Result<Reconciliation, TreeError> {
        self.require_stage(Stage::Implementation)?;
        for record in eval.walk() {
            let Some(id) = &record.matched_node_id else {
                return Err(TreeError::StructureFrozen);
            };
            if !self.contains(id) {
                return Err(TreeError::UnknownMatchedId(id.clone()));
            }
            if !matches!(record.status, EvaluatedStatus::Implementation(_)) {
                return Err(TreeError::StatusKindMismatch);
            }
        }
        let mut anomalies = Vec::new();
        let snapshot = self.clone();
        let seen = apply_matched(self, eval, &mut anomalies, |node, record| {
            let EvaluatedStatus::Implementation(status) = record.status else { unreachable!() };
            node.impl_status = status;
            if status.is_failing() {
                node.hints.failed_attempts += 1;
            }
            node.hints.refresh(&record.hints);
        });
        report_unmatched(&snapshot, &seen, &mut anomalies);
        self.revision += 1;
        Ok(Reconciliation { anomalies, created: Vec::new() })
    }

    /// Replaces an empty tree with one built wholesale from an evaluation,
    /// as when a learner's first move is to infer the tree from code.
    ///
    /// Returns the id given to each record, in record pre-order; `None` for
    /// records dropped at the tree limits.
    pub fn adopt(&mut self, eval: &EvaluatedTree) -> Result<(Vec<Option<NodeId>>, Vec<Anomaly>), TreeError> {
        self.require_stage(Stage::Formation)?;
        if !self.is_empty() {
            return Err(TreeError::TreeNotEmpty);
        }
        if eval.walk().any(|r| !matches!(r.status, EvaluatedStatus::Formation(_))) {
            return Err(TreeError::StatusKindMismatch);
        }
        let total = eval.walk().count();
        let mut ids = self.mint_ids(total).into_iter();
        let mut budget = self.limits.max_nodes;
        let mut anomalies = Vec::new();
        let mut assigned = Vec::with_capacity(total);
        let mut roots = Vec::new();
        for record in &eval.records {
            if let Some(node) = build_adopted(
                record,
                self.limits.max_depth,
                &mut budget,
                &mut ids,
                &mut assigned,
                &mut anomalies,
            ) {
                roots.push(node);
            }
        }
        self.roots = roots;
        self.revision += 1;
        Ok((assigned, anomalies))
    }
}

fn apply_matched(
    tree: &mut StepTree,
    eval: &EvaluatedTree,
    anomalies: &mut Vec<Anomaly>,
    mut apply: impl FnMut(&mut StepNode, &EvaluatedRecord),
) -> HashSet<NodeId> {
    let mut seen = HashSet::new();
    for record in eval.walk() {
        let Some(id) = &record.matched_node_id else { continue };
        if !seen.insert(id.clone()) {
            anomalies.push(Anomaly::DuplicateRecord { node: id.clone() });
            continue;
        }
        let node = tree.node_mut(id).expect("ids validated before applying");
        if !record.text.trim().is_empty() && record.text.trim() != node.text.trim() {
            anomalies.push(Anomaly::TextIgnored { node: id.clone() });
        }
        apply(node, record);
    }
    seen
}

fn report_unmatched(tree: &StepTree, seen: &HashSet<NodeId>, anomalies: &mut Vec<Anomaly>) {
    anomalies.extend(
        tree.nodes()
            .filter(|n| !seen.contains(&n.id))
            .map(|n| Anomaly::UnmatchedNode { node: n.id.clone() }),
    );
}

/// Outermost records without an id, in pre-order. Records nested inside them
/// travel with their enclosing new node.
fn collect_new<'a>(records: &'a [EvaluatedRecord], out: &mut Vec<&'a EvaluatedRecord>) {
    for record in records {
        if record.matched_node_id.is_none() {
            out.push(record);
        } else {
            collect_new(&record.children, out);
        }
    }
}

fn build_missing(
    record: &EvaluatedRecord,
    levels: usize,
    budget: &mut usize,
    ids: &mut impl Iterator<Item = NodeId>,
    anomalies: &mut Vec<Anomaly>,
) -> Option<StepNode> {
    if levels == 0 || *budget == 0 {
        anomalies.push(Anomaly::NodeLimitReached);
        return None;
    }
    *budget -= 1;
    let mut node = StepNode::learner(ids.next().expect("enough ids minted"), String::new());
    node.formation_status = FormationStatus::Missing;
    node.flags = NodeFlags { divisible: record.divisible, system_generated: false };
    node.hints.refresh(&record.hints);
    for child in record.children.iter().filter(|c| c.matched_node_id.is_none()) {
        if let Some(built) = build_missing(child, levels - 1, budget, ids, anomalies) {
            node.children.push(built);
        }
    }
    Some(node)
}

fn build_adopted(
    record: &EvaluatedRecord,
    levels: usize,
    budget: &mut usize,
    ids: &mut impl Iterator<Item = NodeId>,
    assigned: &mut Vec<Option<NodeId>>,
    anomalies: &mut Vec<Anomaly>,
) -> Option<StepNode> {
    if levels == 0 || *budget == 0 {
        anomalies.push(Anomaly::NodeLimitReached);
        assigned.extend(record.walk().map(|_| None));
        return None;
    }
    *budget -= 1;
    let EvaluatedStatus::Formation(status) = record.status else { unreachable!() };
    let text = if status == FormationStatus::Missing { String::new() } else { record.text.clone() };
    let id = ids.next().expect("enough ids minted");
    assigned.push(Some(id.clone()));
    let mut node = StepNode::learner(id, text);
    node.formation_status = status;
    node.flags.divisible = record.divisible;
    node.hints = HintLadder {
        failed_attempts: u32::from(status == FormationStatus::Incorrect),
        ..HintLadder::default()
    };
    node.hints.refresh(&record.hints);
    for child in &record.children {
        if let Some(built) = build_adopted(child, levels - 1, budget, ids, assigned, anomalies) {
            node.children.push(built);
        }
    }
    Some(node)
}

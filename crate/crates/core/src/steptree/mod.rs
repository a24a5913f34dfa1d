//! The learner's step tree.
//!
//! A [`StepTree`] holds an ordered forest of [`StepNode`]s. Each node carries
//! two independent status tracks: a formation status (is this step of the plan
//! right?) and an implementation status (does the code realize it?). Which
//! track is live depends on the tree's [`Stage`].
//!
//! Every mutation bumps [`StepTree::revision`]. Node ids embed the revision at
//! which they were minted, so an id is never handed out twice for the same
//! tree even after the node it named has been deleted.

mod edit;
mod hints;
mod reconcile;
mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hints::{HintLevel, HintView};
pub use reconcile::{EvaluatedRecord, EvaluatedStatus, EvaluatedTree, HintTexts, InsertionHint, Reconciliation};
pub use wire::WireError;

/// Default maximum depth: step / sub-step / sub-sub-step / sub-sub-sub-step.
pub const DEFAULT_MAX_DEPTH: usize = 4;
pub const DEFAULT_MAX_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Self {
        NodeId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(value: &str) -> Self {
        NodeId(value.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Formation,
    Implementation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationStatus {
    #[default]
    Unchecked,
    Correct,
    Incorrect,
    Missing,
}

impl FormationStatus {
    pub fn is_failing(self) -> bool {
        matches!(self, FormationStatus::Incorrect | FormationStatus::Missing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImplementationStatus {
    #[default]
    NotChecked,
    Implemented,
    IncorrectlyImplemented,
    ToBeCoded,
}

impl ImplementationStatus {
    pub fn is_failing(self) -> bool {
        matches!(
            self,
            ImplementationStatus::IncorrectlyImplemented | ImplementationStatus::ToBeCoded
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeFlags {
    /// Advisory "can be divided" marker. Coexists with any status.
    pub divisible: bool,
    /// Content authored by the reveal pathway rather than the learner.
    pub system_generated: bool,
}

/// Three-level hint ladder plus the attempt counter that gates its top rung.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HintLadder {
    pub general: Option<String>,
    pub detailed: Option<String>,
    pub reveal: Option<String>,
    pub highest_level_viewed: u8,
    pub failed_attempts: u32,
}

impl HintLadder {
    /// Number of contiguous levels, starting at the general hint, that have text.
    pub fn populated_levels(&self) -> u8 {
        match (&self.general, &self.detailed, &self.reveal) {
            (Some(_), Some(_), Some(_)) => 3,
            (Some(_), Some(_), None) => 2,
            (Some(_), None, _) => 1,
            (None, _, _) => 0,
        }
    }

    pub fn text(&self, level: HintLevel) -> Option<&str> {
        match level {
            HintLevel::General => self.general.as_deref(),
            HintLevel::Detailed => self.detailed.as_deref(),
            HintLevel::Reveal => self.reveal.as_deref(),
        }
    }

    fn clear_contents(&mut self) {
        self.general = None;
        self.detailed = None;
        self.reveal = None;
        self.highest_level_viewed = 0;
    }

    fn refresh(&mut self, texts: &HintTexts) {
        self.general = texts.general.clone();
        self.detailed = texts.detailed.clone();
        self.reveal = texts.reveal.clone();
        self.highest_level_viewed = self.highest_level_viewed.min(self.populated_levels());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepNode {
    pub id: NodeId,
    pub text: String,
    pub children: Vec<StepNode>,
    pub formation_status: FormationStatus,
    pub impl_status: ImplementationStatus,
    pub flags: NodeFlags,
    pub hints: HintLadder,
    /// The learner's verbatim input at the last edit. Empty for blank
    /// missing nodes and for system-generated content.
    pub origin_text: String,
}

impl StepNode {
    fn learner(id: NodeId, text: String) -> Self {
        StepNode {
            id,
            origin_text: text.clone(),
            text,
            children: Vec::new(),
            formation_status: FormationStatus::Unchecked,
            impl_status: ImplementationStatus::NotChecked,
            flags: NodeFlags::default(),
            hints: HintLadder::default(),
        }
    }

    /// Height of the subtree rooted here (a leaf has height 1).
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(StepNode::height).max().unwrap_or(0)
    }

    pub fn subtree_len(&self) -> usize {
        1 + self.children.iter().map(StepNode::subtree_len).sum::<usize>()
    }

    /// Pre-order traversal of this node and its descendants.
    pub fn walk(&self) -> impl Iterator<Item = &StepNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeLimits {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { max_depth: DEFAULT_MAX_DEPTH, max_nodes: DEFAULT_MAX_NODES }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTree {
    pub problem_id: String,
    pub stage: Stage,
    pub roots: Vec<StepNode>,
    pub revision: u64,
    limits: TreeLimits,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("unknown parent node {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("depth limit of {0} levels exceeded")]
    DepthLimitExceeded(usize),
    #[error("tree size limit of {0} nodes exceeded")]
    NodeLimitExceeded(usize),
    #[error("operation requires the {expected:?} stage")]
    WrongStage { expected: Stage },
    #[error("index {index} out of range for {len} children")]
    InvalidIndex { index: usize, len: usize },
    #[error("split count must be positive")]
    InvalidCount,
    #[error("a node cannot be moved under itself or its descendants")]
    CycleCreated,
    #[error("node {0} is implemented and can no longer be edited")]
    NodeLocked(NodeId),
    #[error("every step must be correct before implementation starts")]
    NotAllCorrect,
    #[error("tree already has steps")]
    TreeNotEmpty,
    #[error("evaluation references unknown node {0}")]
    UnknownMatchedId(NodeId),
    #[error("structure is frozen during implementation; evaluation adds a node")]
    StructureFrozen,
    #[error("evaluation status does not belong to the current stage")]
    StatusKindMismatch,
    #[error("node {0} is not eligible for hints")]
    NodeNotEligible(NodeId),
    #[error("reveal unlocks after two failed attempts ({failed_attempts} so far)")]
    HintNotYetAvailable { failed_attempts: u32 },
    #[error("no hint text available at level {0}")]
    HintContentMissing(u8),
}

impl StepTree {
    pub fn new(problem_id: impl Into<String>) -> Self {
        StepTree::with_limits(problem_id, TreeLimits::default())
    }

    pub fn with_limits(problem_id: impl Into<String>, limits: TreeLimits) -> Self {
        StepTree {
            problem_id: problem_id.into(),
            stage: Stage::Formation,
            roots: Vec::new(),
            revision: 0,
            limits,
        }
    }

    pub fn limits(&self) -> TreeLimits {
        self.limits
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.roots.iter().map(StepNode::subtree_len).sum()
    }

    /// Pre-order traversal over every node.
    pub fn nodes(&self) -> impl Iterator<Item = &StepNode> {
        self.roots.iter().flat_map(StepNode::walk)
    }

    pub fn node(&self, id: &NodeId) -> Option<&StepNode> {
        self.nodes().find(|n| &n.id == id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.node(id).is_some()
    }

    /// Index path from the root list down to `id`.
    pub fn path_of(&self, id: &NodeId) -> Option<Vec<usize>> {
        fn search(nodes: &[StepNode], id: &NodeId, path: &mut Vec<usize>) -> bool {
            for (i, node) in nodes.iter().enumerate() {
                path.push(i);
                if &node.id == id || search(&node.children, id, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        search(&self.roots, id, &mut path).then_some(path)
    }

    /// Depth of a node; roots sit at depth 1.
    pub fn depth_of(&self, id: &NodeId) -> Option<usize> {
        self.path_of(id).map(|p| p.len())
    }

    pub fn parent_of(&self, id: &NodeId) -> Option<Option<NodeId>> {
        let path = self.path_of(id)?;
        if path.len() == 1 {
            return Some(None);
        }
        let parent = self.node_at(&path[..path.len() - 1])?;
        Some(Some(parent.id.clone()))
    }

    /// Hierarchical label such as `2.1` for the first child of the second root.
    pub fn label_of(&self, id: &NodeId) -> Option<String> {
        let path = self.path_of(id)?;
        Some(path.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("."))
    }

    pub(crate) fn node_at(&self, path: &[usize]) -> Option<&StepNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.roots.get(*first)?;
        for i in rest {
            node = node.children.get(*i)?;
        }
        Some(node)
    }

    pub(crate) fn node_at_mut(&mut self, path: &[usize]) -> Option<&mut StepNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.roots.get_mut(*first)?;
        for i in rest {
            node = node.children.get_mut(*i)?;
        }
        Some(node)
    }

    pub(crate) fn node_mut(&mut self, id: &NodeId) -> Option<&mut StepNode> {
        let path = self.path_of(id)?;
        self.node_at_mut(&path)
    }

    /// Children list of `parent`, or the root list.
    pub(crate) fn children_mut(&mut self, parent: Option<&NodeId>) -> Option<&mut Vec<StepNode>> {
        match parent {
            None => Some(&mut self.roots),
            Some(id) => self.node_mut(id).map(|n| &mut n.children),
        }
    }

    pub(crate) fn children_of(&self, parent: Option<&NodeId>) -> Option<&[StepNode]> {
        match parent {
            None => Some(&self.roots),
            Some(id) => self.node(id).map(|n| n.children.as_slice()),
        }
    }

    pub fn all_correct(&self) -> bool {
        !self.is_empty() && self.nodes().all(|n| n.formation_status == FormationStatus::Correct)
    }

    pub fn all_implemented(&self) -> bool {
        !self.is_empty() && self.nodes().all(|n| n.impl_status == ImplementationStatus::Implemented)
    }

    /// Moves the tree into the implementation stage.
    ///
    /// Requires a non-empty tree whose every node is `Correct`. Implementation
    /// statuses start at `NotChecked` and each node's hint ladder, including
    /// its attempt counter, starts fresh for the new stage.
    pub fn advance_stage(&mut self) -> Result<(), TreeError> {
        self.require_stage(Stage::Formation)?;
        if !self.all_correct() {
            return Err(TreeError::NotAllCorrect);
        }
        self.stage = Stage::Implementation;
        self.for_each_node_mut(|node| {
            node.impl_status = ImplementationStatus::NotChecked;
            node.hints = HintLadder::default();
        });
        self.revision += 1;
        Ok(())
    }

    /// Fingerprint of what a provider sees: ids, texts and shape.
    ///
    /// Hint views and status changes do not alter it, so a provider answer
    /// computed for one fingerprint can be applied to any tree sharing it.
    pub fn content_fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        fn feed(hasher: &mut Sha256, nodes: &[StepNode]) {
            hasher.update(b"[");
            for node in nodes {
                hasher.update(node.id.as_str().as_bytes());
                hasher.update([0]);
                hasher.update(node.text.as_bytes());
                hasher.update([0]);
                feed(hasher, &node.children);
            }
            hasher.update(b"]");
        }
        let mut hasher = Sha256::new();
        hasher.update(match self.stage {
            Stage::Formation => b"F",
            Stage::Implementation => b"I",
        });
        feed(&mut hasher, &self.roots);
        hex::encode(hasher.finalize())
    }

    pub(crate) fn for_each_node_mut(&mut self, mut f: impl FnMut(&mut StepNode)) {
        fn go(nodes: &mut [StepNode], f: &mut impl FnMut(&mut StepNode)) {
            for node in nodes {
                f(node);
                go(&mut node.children, f);
            }
        }
        go(&mut self.roots, &mut f);
    }

    pub(crate) fn require_stage(&self, expected: Stage) -> Result<(), TreeError> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(TreeError::WrongStage { expected })
        }
    }

    /// Mints `count` fresh ids for the revision about to be committed.
    pub(crate) fn mint_ids(&self, count: usize) -> Vec<NodeId> {
        let revision = self.revision + 1;
        let mut ids = Vec::with_capacity(count);
        let mut k = 1usize;
        while ids.len() < count {
            let id = NodeId(format!("n{revision}-{k}"));
            if !self.contains(&id) {
                ids.push(id);
            }
            k += 1;
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn correct_tree(texts: &[&str]) -> StepTree {
        let mut tree = StepTree::new("p");
        for (i, text) in texts.iter().enumerate() {
            tree.add_step(None, i, text).unwrap();
        }
        tree.for_each_node_mut(|n| n.formation_status = FormationStatus::Correct);
        tree
    }

    #[test]
    fn advance_requires_all_correct() {
        let mut tree = correct_tree(&["a", "b", "c"]);
        tree.advance_stage().unwrap();
        assert_eq!(tree.stage, Stage::Implementation);
        assert!(tree.nodes().all(|n| n.impl_status == ImplementationStatus::NotChecked));
    }

    #[test]
    fn advance_rejects_missing_node() {
        let mut tree = correct_tree(&["a", "b"]);
        tree.roots[1].formation_status = FormationStatus::Missing;
        assert_eq!(tree.advance_stage(), Err(TreeError::NotAllCorrect));
        assert_eq!(tree.stage, Stage::Formation);
    }

    #[test]
    fn empty_tree_cannot_advance() {
        let mut tree = StepTree::new("p");
        assert_eq!(tree.advance_stage(), Err(TreeError::NotAllCorrect));
    }

    #[test]
    fn divisible_does_not_block_advance() {
        let mut tree = correct_tree(&["a"]);
        tree.roots[0].flags.divisible = true;
        assert!(tree.advance_stage().is_ok());
    }

    #[test]
    fn labels_follow_positions() {
        let mut tree = StepTree::new("p");
        let a = tree.add_step(None, 0, "a").unwrap();
        let b = tree.add_step(None, 1, "b").unwrap();
        let kids = tree.split_step(&b, 2).unwrap();
        assert_eq!(tree.label_of(&a).unwrap(), "1");
        assert_eq!(tree.label_of(&kids[1]).unwrap(), "2.2");
        assert_eq!(tree.parent_of(&kids[0]), Some(Some(b)));
    }

    #[test]
    fn ladder_population_is_contiguous() {
        let mut ladder = HintLadder::default();
        assert_eq!(ladder.populated_levels(), 0);
        ladder.detailed = Some("d".into());
        assert_eq!(ladder.populated_levels(), 0);
        ladder.general = Some("g".into());
        assert_eq!(ladder.populated_levels(), 2);
    }
}

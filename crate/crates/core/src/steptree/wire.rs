//! Canonical JSON wire format for step trees.
//!
//! Field names and order are fixed; unknown keys are rejected. Serializing
//! the same tree twice always yields the same bytes.

use std::collections::HashSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{
    FormationStatus, HintLadder, ImplementationStatus, NodeFlags, NodeId, Stage, StepNode,
    StepTree, TreeLimits,
};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed tree JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("tree deeper than {0} levels")]
    TooDeep(usize),
    #[error("tree larger than {0} nodes")]
    TooLarge(usize),
    #[error("hint level {0} outside 0-3")]
    BadViewedLevel(u8),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WireTree {
    problem_id: String,
    stage: Stage,
    revision: u64,
    roots: Vec<WireNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WireNode {
    id: NodeId,
    text: String,
    status: FormationStatus,
    impl_status: ImplementationStatus,
    divisible: bool,
    system_generated: bool,
    failed_attempts: u32,
    hints: WireHints,
    children: Vec<WireNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireHints {
    general: Option<String>,
    detailed: Option<String>,
    reveal: Option<String>,
    viewed: u8,
}

impl From<&StepNode> for WireNode {
    fn from(node: &StepNode) -> Self {
        WireNode {
            id: node.id.clone(),
            text: node.text.clone(),
            status: node.formation_status,
            impl_status: node.impl_status,
            divisible: node.flags.divisible,
            system_generated: node.flags.system_generated,
            failed_attempts: node.hints.failed_attempts,
            hints: WireHints {
                general: node.hints.general.clone(),
                detailed: node.hints.detailed.clone(),
                reveal: node.hints.reveal.clone(),
                viewed: node.hints.highest_level_viewed,
            },
            children: node.children.iter().map(WireNode::from).collect(),
        }
    }
}

impl WireNode {
    fn into_node(
        self,
        depth: usize,
        limits: TreeLimits,
        seen: &mut HashSet<NodeId>,
    ) -> Result<StepNode, WireError> {
        if depth > limits.max_depth {
            return Err(WireError::TooDeep(limits.max_depth));
        }
        if !seen.insert(self.id.clone()) {
            return Err(WireError::DuplicateId(self.id));
        }
        if seen.len() > limits.max_nodes {
            return Err(WireError::TooLarge(limits.max_nodes));
        }
        if self.hints.viewed > 3 {
            return Err(WireError::BadViewedLevel(self.hints.viewed));
        }
        let children = self
            .children
            .into_iter()
            .map(|c| c.into_node(depth + 1, limits, seen))
            .collect::<Result<_, _>>()?;
        let origin_text = if self.system_generated { String::new() } else { self.text.clone() };
        Ok(StepNode {
            id: self.id,
            text: self.text,
            children,
            formation_status: self.status,
            impl_status: self.impl_status,
            flags: NodeFlags { divisible: self.divisible, system_generated: self.system_generated },
            hints: HintLadder {
                general: self.hints.general,
                detailed: self.hints.detailed,
                reveal: self.hints.reveal,
                highest_level_viewed: self.hints.viewed,
                failed_attempts: self.failed_attempts,
            },
            origin_text,
        })
    }
}

impl StepTree {
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(self).expect("tree serialization is infallible")
    }

    pub fn from_wire_json(json: &str) -> Result<StepTree, WireError> {
        let wire: WireTree = serde_json::from_str(json)?;
        StepTree::from_wire(wire)
    }

    fn from_wire(wire: WireTree) -> Result<StepTree, WireError> {
        let limits = TreeLimits::default();
        let mut seen = HashSet::new();
        let roots = wire
            .roots
            .into_iter()
            .map(|n| n.into_node(1, limits, &mut seen))
            .collect::<Result<_, _>>()?;
        Ok(StepTree {
            problem_id: wire.problem_id,
            stage: wire.stage,
            roots,
            revision: wire.revision,
            limits,
        })
    }
}

impl Serialize for StepTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WireTree {
            problem_id: self.problem_id.clone(),
            stage: self.stage,
            revision: self.revision,
            roots: self.roots.iter().map(WireNode::from).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StepTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireTree::deserialize(deserializer)?;
        StepTree::from_wire(wire).map_err(serde::de::Error::custom)
    }
}

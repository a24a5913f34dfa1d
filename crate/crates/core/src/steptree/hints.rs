//! Progressive hint gating.

use serde::{Deserialize, Serialize};

use super::{FormationStatus, NodeId, Stage, StepNode, StepTree, TreeError};

/// Failed checks needed before the reveal rung unlocks.
pub const REVEAL_THRESHOLD: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum HintLevel {
    General = 1,
    Detailed = 2,
    Reveal = 3,
}

impl From<HintLevel> for u8 {
    fn from(level: HintLevel) -> u8 {
        level as u8
    }
}

impl TryFrom<u8> for HintLevel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(HintLevel::General),
            2 => Ok(HintLevel::Detailed),
            3 => Ok(HintLevel::Reveal),
            other => Err(format!("hint level {other} outside 1-3")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HintView {
    pub level: HintLevel,
    pub text: String,
    /// The sub-step created when a formation-stage reveal is granted.
    pub revealed_node: Option<NodeId>,
}

impl StepTree {
    /// Returns the next hint rung for a failing node.
    ///
    /// Rungs are served in order. The reveal rung additionally needs
    /// [`REVEAL_THRESHOLD`] failed checks on the node. Once every rung has
    /// been seen, further requests repeat the reveal without side effects.
    pub fn request_hint(&mut self, id: &NodeId) -> Result<HintView, TreeError> {
        let stage = self.stage;
        let max_depth = self.limits.max_depth;
        let room = self.len() < self.limits.max_nodes;
        let depth = self.depth_of(id).ok_or_else(|| TreeError::UnknownNode(id.clone()))?;
        let mint = self.mint_ids(1).remove(0);

        let node = self.node_mut(id).expect("depth resolved above");
        let eligible = match stage {
            Stage::Formation => node.formation_status.is_failing(),
            Stage::Implementation => node.impl_status.is_failing(),
        };
        if !eligible {
            return Err(TreeError::NodeNotEligible(id.clone()));
        }
        let previous = node.hints.highest_level_viewed;
        let level = HintLevel::try_from((previous + 1).min(3)).expect("level within 1-3");
        if level == HintLevel::Reveal && node.hints.failed_attempts < REVEAL_THRESHOLD {
            return Err(TreeError::HintNotYetAvailable {
                failed_attempts: node.hints.failed_attempts,
            });
        }
        let text = node
            .hints
            .text(level)
            .ok_or(TreeError::HintContentMissing(level as u8))?
            .to_string();
        node.hints.highest_level_viewed = previous.max(level as u8);

        let mut revealed_node = None;
        let first_reveal = level == HintLevel::Reveal && previous < 3;
        if first_reveal && stage == Stage::Formation && depth < max_depth && room {
            let mut child = StepNode::learner(mint.clone(), String::new());
            child.text = text.clone();
            child.flags.system_generated = true;
            child.formation_status = FormationStatus::Unchecked;
            node.children.push(child);
            revealed_node = Some(mint);
        }
        self.revision += 1;
        Ok(HintView { level, text, revealed_node })
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn failing_node(failed_attempts: u32) -> (StepTree, NodeId) {
        let mut tree = StepTree::new("p");
        let id = tree.add_step(None, 0, "step").unwrap();
        let node = tree.node_mut(&id).unwrap();
        node.formation_status = FormationStatus::Incorrect;
        node.hints = HintLadder {
            general: Some("what comes first?".into()),
            detailed: Some("think about traversal".into()),
            reveal: Some("sort the input".into()),
            highest_level_viewed: 0,
            failed_attempts,
        };
        (tree, id)
    }

    #[test]
    fn first_request_is_general() {
        let (mut tree, id) = failing_node(1);
        let view = tree.request_hint(&id).unwrap();
        assert_eq!(view.level, HintLevel::General);
        assert_eq!(view.text, "what comes first?");
        assert_eq!(tree.node(&id).unwrap().hints.highest_level_viewed, 1);
    }

    #[test]
    fn reveal_is_gated_on_attempts() {
        let (mut tree, id) = failing_node(1);
        tree.request_hint(&id).unwrap();
        tree.request_hint(&id).unwrap();
        assert_eq!(
            tree.request_hint(&id),
            Err(TreeError::HintNotYetAvailable { failed_attempts: 1 })
        );
        assert_eq!(tree.node(&id).unwrap().hints.highest_level_viewed, 2);
    }

    #[test]
    fn reveal_creates_one_system_generated_child() {
        let (mut tree, id) = failing_node(2);
        let blanks = tree.node(&id).unwrap().children.len();
        tree.request_hint(&id).unwrap();
        tree.request_hint(&id).unwrap();
        let view = tree.request_hint(&id).unwrap();
        assert_eq!(view.level, HintLevel::Reveal);
        let child_id = view.revealed_node.unwrap();
        let node = tree.node(&id).unwrap();
        assert_eq!(node.children.len(), blanks + 1);
        let child = tree.node(&child_id).unwrap();
        assert!(child.flags.system_generated);
        assert_eq!(child.text, "sort the input");
        assert!(child.origin_text.is_empty());

        // viewing again does not create another child
        let again = tree.request_hint(&id).unwrap();
        assert_eq!(again.revealed_node, None);
        assert_eq!(tree.node(&id).unwrap().children.len(), blanks + 1);
    }

    #[test]
    fn reveal_leaves_existing_substeps_blank() {
        let (mut tree, id) = failing_node(2);
        tree.split_step(&id, 2).unwrap();
        for _ in 0..3 {
            tree.request_hint(&id).unwrap();
        }
        let node = tree.node(&id).unwrap();
        assert_eq!(node.children.len(), 3);
        assert!(node.children[..2].iter().all(|c| c.text.is_empty() && !c.flags.system_generated));
        assert!(node.children[2].flags.system_generated);
    }

    #[test]
    fn correct_nodes_are_not_eligible() {
        let (mut tree, id) = failing_node(0);
        tree.node_mut(&id).unwrap().formation_status = FormationStatus::Correct;
        assert_eq!(tree.request_hint(&id), Err(TreeError::NodeNotEligible(id)));
    }

    #[test]
    fn missing_text_is_reported() {
        let (mut tree, id) = failing_node(0);
        tree.node_mut(&id).unwrap().hints.general = None;
        assert_eq!(tree.request_hint(&id), Err(TreeError::HintContentMissing(1)));
    }

    #[test]
    fn implementation_reveal_has_no_structural_effect() {
        let mut tree = StepTree::new("p");
        let id = tree.add_step(None, 0, "step").unwrap();
        tree.roots[0].formation_status = FormationStatus::Correct;
        tree.advance_stage().unwrap();
        let node = tree.node_mut(&id).unwrap();
        node.impl_status = ImplementationStatus::ToBeCoded;
        node.hints = HintLadder {
            general: Some("g".into()),
            detailed: Some("pseudo".into()),
            reveal: Some("code".into()),
            highest_level_viewed: 2,
            failed_attempts: 2,
        };
        let view = tree.request_hint(&id).unwrap();
        assert_eq!(view.text, "code");
        assert_eq!(view.revealed_node, None);
        assert_eq!(tree.len(), 1);
    }
}

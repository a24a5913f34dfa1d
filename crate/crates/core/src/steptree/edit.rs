//! Learner-driven edits: add, split, move, delete and rewrite steps.

use super::{FormationStatus, ImplementationStatus, NodeId, Stage, StepNode, StepTree, TreeError};

impl StepTree {
    /// Inserts a new step at `index` under `parent` (or among the roots).
    pub fn add_step(
        &mut self,
        parent: Option<&NodeId>,
        index: usize,
        text: &str,
    ) -> Result<NodeId, TreeError> {
        self.require_stage(Stage::Formation)?;
        let depth = self.child_depth(parent)?;
        if depth > self.limits.max_depth {
            return Err(TreeError::DepthLimitExceeded(self.limits.max_depth));
        }
        if self.len() + 1 > self.limits.max_nodes {
            return Err(TreeError::NodeLimitExceeded(self.limits.max_nodes));
        }
        let len = self.children_of(parent).map_or(0, <[_]>::len);
        if index > len {
            return Err(TreeError::InvalidIndex { index, len });
        }
        let id = self.mint_ids(1).remove(0);
        let node = StepNode::learner(id.clone(), text.to_string());
        self.children_mut(parent)
            .expect("parent checked above")
            .insert(index, node);
        self.revision += 1;
        Ok(id)
    }

    /// Appends `count` blank sub-steps to `node`.
    pub fn split_step(&mut self, node: &NodeId, count: usize) -> Result<Vec<NodeId>, TreeError> {
        self.require_stage(Stage::Formation)?;
        if count == 0 {
            return Err(TreeError::InvalidCount);
        }
        let depth = self.depth_of(node).ok_or_else(|| TreeError::UnknownNode(node.clone()))?;
        if depth + 1 > self.limits.max_depth {
            return Err(TreeError::DepthLimitExceeded(self.limits.max_depth));
        }
        if self.len() + count > self.limits.max_nodes {
            return Err(TreeError::NodeLimitExceeded(self.limits.max_nodes));
        }
        let ids = self.mint_ids(count);
        let target = self.node_mut(node).expect("node checked above");
        target
            .children
            .extend(ids.iter().map(|id| StepNode::learner(id.clone(), String::new())));
        self.revision += 1;
        Ok(ids)
    }

    /// Moves `node` with its whole subtree to position `index` under
    /// `new_parent`. The index is taken after the node has been detached, so
    /// moving within one parent behaves like a list reorder.
    pub fn move_step(
        &mut self,
        node: &NodeId,
        new_parent: Option<&NodeId>,
        index: usize,
    ) -> Result<(), TreeError> {
        self.require_stage(Stage::Formation)?;
        let path = self.path_of(node).ok_or_else(|| TreeError::UnknownNode(node.clone()))?;
        let subtree = self.node_at(&path).expect("path just resolved");
        if let Some(parent) = new_parent {
            if subtree.walk().any(|n| &n.id == parent) {
                return Err(TreeError::CycleCreated);
            }
            if !self.contains(parent) {
                return Err(TreeError::UnknownParent(parent.clone()));
            }
        }
        let height = subtree.height();
        let parent_depth = match new_parent {
            Some(p) => self.depth_of(p).expect("checked above"),
            None => 0,
        };
        if parent_depth + height > self.limits.max_depth {
            return Err(TreeError::DepthLimitExceeded(self.limits.max_depth));
        }

        let mut next = self.clone();
        let detached = next.detach(&path);
        let siblings = next.children_mut(new_parent).expect("parent checked above");
        if index > siblings.len() {
            return Err(TreeError::InvalidIndex { index, len: siblings.len() });
        }
        siblings.insert(index, detached);
        next.revision += 1;
        *self = next;
        Ok(())
    }

    /// Removes `node` and its subtree.
    pub fn delete_step(&mut self, node: &NodeId) -> Result<(), TreeError> {
        self.require_stage(Stage::Formation)?;
        let path = self.path_of(node).ok_or_else(|| TreeError::UnknownNode(node.clone()))?;
        self.detach(&path);
        self.revision += 1;
        Ok(())
    }

    /// Replaces the text of a step with new learner input.
    ///
    /// The node returns to `Unchecked` and loses its hint texts; its attempt
    /// counter is kept. During implementation only nodes that are not yet
    /// `Implemented` may be rewritten.
    pub fn edit_text(&mut self, node: &NodeId, text: &str) -> Result<(), TreeError> {
        let stage = self.stage;
        let target = self.node_mut(node).ok_or_else(|| TreeError::UnknownNode(node.clone()))?;
        if stage == Stage::Implementation && target.impl_status == ImplementationStatus::Implemented {
            return Err(TreeError::NodeLocked(node.clone()));
        }
        target.text = text.to_string();
        target.origin_text = text.to_string();
        target.formation_status = FormationStatus::Unchecked;
        target.flags.system_generated = false;
        target.hints.clear_contents();
        if stage == Stage::Implementation {
            target.impl_status = ImplementationStatus::NotChecked;
        }
        self.revision += 1;
        Ok(())
    }

    fn child_depth(&self, parent: Option<&NodeId>) -> Result<usize, TreeError> {
        match parent {
            None => Ok(1),
            Some(id) => self
                .depth_of(id)
                .map(|d| d + 1)
                .ok_or_else(|| TreeError::UnknownParent(id.clone())),
        }
    }

    fn detach(&mut self, path: &[usize]) -> StepNode {
        let (last, parent_path) = path.split_last().expect("non-empty path");
        let siblings = if parent_path.is_empty() {
            &mut self.roots
        } else {
            &mut self.node_at_mut(parent_path).expect("valid path").children
        };
        siblings.remove(*last)
    }
}

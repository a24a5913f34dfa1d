#![allow(dead_code)]

use dbox_core::steptree::{
    EvaluatedRecord, EvaluatedStatus, EvaluatedTree, FormationStatus, HintTexts, InsertionHint,
    NodeId, StepTree,
};
use proptest::prelude::*;
use serde_json::Value;

/// One random edit: (parent choice, index choice, text).
pub type AddOp = (usize, usize, String);

pub fn add_ops(max: usize) -> impl Strategy<Value = Vec<AddOp>> {
    prop::collection::vec((any::<usize>(), any::<usize>(), "[a-z ]{0,12}"), 0..max)
}

/// Builds a tree by replaying random insertions; ones that hit a limit are
/// skipped.
pub fn build_tree(ops: &[AddOp]) -> StepTree {
    let mut tree = StepTree::new("prop");
    for (parent_choice, index_choice, text) in ops {
        let ids: Vec<NodeId> = tree.nodes().map(|n| n.id.clone()).collect();
        let pick = parent_choice % (ids.len() + 1);
        let parent = (pick > 0).then(|| ids[pick - 1].clone());
        let len = match &parent {
            None => tree.roots.len(),
            Some(p) => tree.node(p).unwrap().children.len(),
        };
        let _ = tree.add_step(parent.as_ref(), index_choice % (len + 1), text);
    }
    tree
}

/// Rewrites node fields through the wire format, which is the only public
/// way to set statuses directly.
pub fn rewrite_nodes(tree: &StepTree, mut f: impl FnMut(usize, &mut serde_json::Map<String, Value>)) -> StepTree {
    fn go(nodes: &mut [Value], counter: &mut usize, f: &mut impl FnMut(usize, &mut serde_json::Map<String, Value>)) {
        for node in nodes {
            let object = node.as_object_mut().unwrap();
            f(*counter, object);
            *counter += 1;
            let children = object.get_mut("children").unwrap().as_array_mut().unwrap();
            go(children, counter, f);
        }
    }
    let mut value: Value = serde_json::from_str(&tree.to_wire_json()).unwrap();
    let mut counter = 0;
    go(value["roots"].as_array_mut().unwrap(), &mut counter, &mut f);
    StepTree::from_wire_json(&value.to_string()).unwrap()
}

pub fn formation(s: u8) -> FormationStatus {
    match s % 4 {
        0 => FormationStatus::Unchecked,
        1 => FormationStatus::Correct,
        2 => FormationStatus::Incorrect,
        _ => FormationStatus::Missing,
    }
}

pub fn status_name(s: FormationStatus) -> &'static str {
    match s {
        FormationStatus::Unchecked => "unchecked",
        FormationStatus::Correct => "correct",
        FormationStatus::Incorrect => "incorrect",
        FormationStatus::Missing => "missing",
    }
}

/// Random choices that shape an evaluation of some tree.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    /// Per node: (echo it?, status choice, text rewrite?, hint mask).
    pub per_node: Vec<(bool, u8, bool, u8)>,
    /// New missing records: (parent choice, index choice, nested under an
    /// echoed record?).
    pub missing: Vec<(usize, usize, bool)>,
}

pub fn eval_plan() -> impl Strategy<Value = EvalPlan> {
    (
        prop::collection::vec((prop::bool::weighted(0.85), 0u8..3, any::<bool>(), 0u8..8), 64),
        prop::collection::vec((any::<usize>(), 0usize..6, any::<bool>()), 0..4),
    )
        .prop_map(|(per_node, missing)| EvalPlan { per_node, missing })
}

fn plan_status(choice: u8) -> FormationStatus {
    [FormationStatus::Correct, FormationStatus::Incorrect, FormationStatus::Missing][choice as usize % 3]
}

/// Builds a flat evaluation from a plan. Missing records get insertion hints
/// that may be out of range.
pub fn build_eval(tree: &StepTree, plan: &EvalPlan) -> EvaluatedTree {
    let ids: Vec<NodeId> = tree.nodes().map(|n| n.id.clone()).collect();
    let mut records = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let (echo, status, rewrite, mask) = plan.per_node[i % plan.per_node.len()];
        if !echo {
            continue;
        }
        let mut record = EvaluatedRecord::matched(id.clone(), EvaluatedStatus::Formation(plan_status(status)));
        if rewrite {
            record.text = format!("rewritten {i}");
        }
        record.hints = HintTexts {
            general: (mask & 1 != 0).then(|| format!("g{i}")),
            detailed: (mask & 2 != 0).then(|| format!("d{i}")),
            reveal: (mask & 4 != 0).then(|| format!("r{i}")),
        };
        records.push(record);
    }
    for (parent_choice, index, _) in &plan.missing {
        let pick = parent_choice % (ids.len() + 2);
        let parent = match pick {
            0 => None,
            p if p <= ids.len() => Some(ids[p - 1].clone()),
            _ => Some(NodeId::new("no-such-node")),
        };
        records.push(EvaluatedRecord::missing(Some(InsertionHint { parent, index: *index })));
    }
    EvaluatedTree { records }
}

/// (id, text, parent, rank among pre-existing siblings) for every node in
/// `keep`.
pub fn placement(tree: &StepTree, keep: &std::collections::HashSet<NodeId>) -> Vec<(String, String, Option<String>, usize)> {
    fn go(
        nodes: &[dbox_core::steptree::StepNode],
        parent: Option<&str>,
        keep: &std::collections::HashSet<NodeId>,
        out: &mut Vec<(String, String, Option<String>, usize)>,
    ) {
        let mut rank = 0;
        for node in nodes {
            if keep.contains(&node.id) {
                out.push((node.id.to_string(), node.text.clone(), parent.map(str::to_string), rank));
                rank += 1;
            }
            go(&node.children, Some(node.id.as_str()), keep, out);
        }
    }
    let mut out = Vec::new();
    go(&tree.roots, None, keep, &mut out);
    out.sort();
    out
}

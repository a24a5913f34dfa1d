//! Provider anomalies.
//!
//! Model output is never trusted blindly: anything the engine had to repair,
//! ignore or clip is recorded as an [`Anomaly`] and handed back to the caller
//! alongside the repaired result.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::steptree::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Anomaly {
    /// An existing node was not echoed back; it keeps its prior status.
    #[serde(rename_all = "camelCase")]
    UnmatchedNode { node: NodeId },
    /// A record referenced an id that was never sent, or introduced a new
    /// non-missing step where none may be added. The record was dropped.
    #[serde(rename_all = "camelCase")]
    InventedRecord { id: Option<String>, text: String },
    /// The same id was echoed more than once; only the first record counts.
    #[serde(rename_all = "camelCase")]
    DuplicateRecord { node: NodeId },
    /// The provider rewrote a learner's step text; the original was kept.
    #[serde(rename_all = "camelCase")]
    TextIgnored { node: NodeId },
    /// A missing step came with an unusable position and was appended to the
    /// root list instead.
    #[serde(rename_all = "camelCase")]
    InvalidInsertionPosition { created: NodeId },
    /// A missing step could not be materialized without exceeding the tree's
    /// size or depth limit.
    NodeLimitReached,
    /// A mapped line range fell outside the code and was clipped or dropped.
    #[serde(rename_all = "camelCase")]
    RangeOutOfBounds {
        node: NodeId,
        start: i64,
        end: i64,
        line_count: usize,
        clipped: bool,
    },
    /// The tree changed while the provider was answering; the result was
    /// discarded.
    #[serde(rename_all = "camelCase")]
    StaleResult { sent_revision: u64, current_revision: u64 },
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anomaly::UnmatchedNode { node } => write!(f, "node {node} missing from provider response"),
            Anomaly::InventedRecord { id: Some(id), .. } => write!(f, "provider invented record id {id}"),
            Anomaly::InventedRecord { id: None, text } => {
                write!(f, "provider added an unanchored step {text:?}")
            }
            Anomaly::DuplicateRecord { node } => write!(f, "node {node} echoed more than once"),
            Anomaly::TextIgnored { node } => write!(f, "provider rewrote text of node {node}"),
            Anomaly::InvalidInsertionPosition { created } => {
                write!(f, "missing step {created} had no valid position; appended to roots")
            }
            Anomaly::NodeLimitReached => write!(f, "missing step dropped at tree limit"),
            Anomaly::RangeOutOfBounds { node, start, end, line_count, clipped } => write!(
                f,
                "range {start}-{end} for node {node} outside 1-{line_count} ({})",
                if *clipped { "clipped" } else { "dropped" }
            ),
            Anomaly::StaleResult { sent_revision, current_revision } => write!(
                f,
                "result computed for revision {sent_revision} discarded at revision {current_revision}"
            ),
        }
    }
}

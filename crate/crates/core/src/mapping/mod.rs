//! Associations between step-tree nodes and source lines.
//!
//! A [`CodeMapping`] is always computed against one exact code text and
//! remembers that text's hash. Line numbers drift as soon as the code is
//! edited, so lookups against any other text report the mapping as stale
//! instead of highlighting the wrong lines.

mod comments;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::steptree::{NodeId, StepTree};

pub use comments::{insert_comments, strip_comments, Annotated, CommentError, CommentStyle, DEFAULT_MARKER};

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub fn new(start: usize, end: usize) -> Self {
        LineRange { start, end }
    }

    pub fn contains(&self, other: &LineRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &LineRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for LineRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl Serialize for LineRange {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LineRange {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(deserializer)?;
        if start == 0 || start > end {
            return Err(serde::de::Error::custom(format!("invalid line range {start}-{end}")));
        }
        Ok(LineRange { start, end })
    }
}

/// Hex SHA-256 of a code text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodeRevision(String);

impl CodeRevision {
    pub fn of(code: &str) -> Self {
        CodeRevision(hex::encode(Sha256::digest(code.as_bytes())))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Number of lines in `code`, counting a final line without a terminator and
/// not counting the empty remainder after a trailing newline.
pub fn line_count(code: &str) -> usize {
    if code.is_empty() {
        return 0;
    }
    let newlines = code.matches('\n').count();
    if code.ends_with('\n') {
        newlines
    } else {
        newlines + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CodeMapping {
    pub code_revision: CodeRevision,
    pub entries: BTreeMap<NodeId, Vec<LineRange>>,
}

/// Result of a hover lookup.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Hover {
    pub ranges: Vec<LineRange>,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum MappingAnomaly {
    OutOfBounds { node: NodeId, range: LineRange, line_count: usize },
    Overlap { node: NodeId, first: LineRange, second: LineRange },
    Unsorted { node: NodeId },
    Containment { child: NodeId, range: LineRange, parent: NodeId },
}

impl CodeMapping {
    pub fn empty(code: &str) -> Self {
        CodeMapping { code_revision: CodeRevision::of(code), entries: BTreeMap::new() }
    }

    /// Builds a mapping from raw per-node ranges: each node's ranges are sorted
    /// and overlapping ones merged.
    pub fn from_ranges(
        code: &str,
        ranges: impl IntoIterator<Item = (NodeId, Vec<LineRange>)>,
    ) -> Self {
        let mut entries: BTreeMap<NodeId, Vec<LineRange>> = BTreeMap::new();
        for (node, list) in ranges {
            entries.entry(node).or_default().extend(list);
        }
        for list in entries.values_mut() {
            *list = normalize(std::mem::take(list));
        }
        entries.retain(|_, list| !list.is_empty());
        CodeMapping { code_revision: CodeRevision::of(code), entries }
    }

    pub fn is_fresh_for(&self, code: &str) -> bool {
        self.code_revision == CodeRevision::of(code)
    }

    /// Ranges to highlight for `node` in the editor's current `code`. Never
    /// fails: unknown ids and stale mappings yield no ranges.
    pub fn ranges_for(&self, node: &NodeId, code: &str) -> Hover {
        if !self.is_fresh_for(code) {
            return Hover { ranges: Vec::new(), stale: true };
        }
        Hover { ranges: self.entries.get(node).cloned().unwrap_or_default(), stale: false }
    }

    /// Reports out-of-bounds ranges, overlapping or unsorted ranges within a
    /// node, and child ranges not contained in any range of a mapped parent.
    pub fn validate(&self, code: &str, tree: &StepTree) -> Vec<MappingAnomaly> {
        let count = line_count(code);
        let mut anomalies = Vec::new();
        for (node, ranges) in &self.entries {
            for range in ranges {
                if range.start == 0 || range.start > range.end || range.end > count {
                    anomalies.push(MappingAnomaly::OutOfBounds {
                        node: node.clone(),
                        range: *range,
                        line_count: count,
                    });
                }
            }
            for pair in ranges.windows(2) {
                if pair[0].overlaps(&pair[1]) {
                    anomalies.push(MappingAnomaly::Overlap {
                        node: node.clone(),
                        first: pair[0],
                        second: pair[1],
                    });
                } else if pair[0].start > pair[1].start {
                    anomalies.push(MappingAnomaly::Unsorted { node: node.clone() });
                }
            }
            let Some(Some(parent)) = tree.parent_of(node) else { continue };
            let Some(parent_ranges) = self.entries.get(&parent) else { continue };
            for range in ranges {
                if !parent_ranges.iter().any(|p| p.contains(range)) {
                    anomalies.push(MappingAnomaly::Containment {
                        child: node.clone(),
                        range: *range,
                        parent: parent.clone(),
                    });
                }
            }
        }
        anomalies
    }
}

fn normalize(mut ranges: Vec<LineRange>) -> Vec<LineRange> {
    ranges.sort();
    let mut merged: Vec<LineRange> = Vec::with_capacity(ranges.len());
    for range in ranges {
        match merged.last_mut() {
            Some(last) if last.overlaps(&range) => last.end = last.end.max(range.end),
            _ => merged.push(range),
        }
    }
    merged
}

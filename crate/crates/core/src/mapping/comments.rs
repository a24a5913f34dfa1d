//! "Copy to Comments": writing the step tree into the learner's code.
//!
//! Each node becomes one line comment labeled with its position in the tree
//! (`Step 2.1: ...`) and tagged with a marker token. The marker makes the
//! operation reversible and repeatable: previously inserted lines are
//! stripped before new ones go in, and stripping them restores the code.

use thiserror::Error;

use super::{line_count, CodeMapping, LineRange};
use crate::steptree::{NodeId, Stage, StepNode, StepTree};

pub const DEFAULT_MARKER: &str = "⟦dbox⟧";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommentError {
    #[error("unknown comment style {0:?}")]
    UnknownCommentStyle(String),
    #[error("comments can only be inserted during implementation")]
    WrongStage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommentStyle {
    pub line_prefix: String,
    pub marker: String,
}

impl CommentStyle {
    pub fn new(line_prefix: impl Into<String>) -> Result<Self, CommentError> {
        let line_prefix = line_prefix.into();
        if line_prefix.trim().is_empty() {
            return Err(CommentError::UnknownCommentStyle(line_prefix));
        }
        Ok(CommentStyle { line_prefix, marker: DEFAULT_MARKER.to_string() })
    }

    /// Resolves a language or prefix name to its line-comment syntax.
    pub fn named(name: &str) -> Result<Self, CommentError> {
        let prefix = match name.to_ascii_lowercase().as_str() {
            "python" | "ruby" | "shell" | "bash" | "r" | "hash" | "#" => "#",
            "c" | "cpp" | "c++" | "java" | "javascript" | "typescript" | "rust" | "go" | "kotlin"
            | "swift" | "csharp" | "slash" | "//" => "//",
            "sql" | "lua" | "haskell" | "dash" | "--" => "--",
            _ => return Err(CommentError::UnknownCommentStyle(name.to_string())),
        };
        CommentStyle::new(prefix)
    }

    pub fn with_marker(mut self, marker: impl Into<String>) -> Self {
        self.marker = marker.into();
        self
    }
}

impl Default for CommentStyle {
    fn default() -> Self {
        CommentStyle { line_prefix: "#".into(), marker: DEFAULT_MARKER.into() }
    }
}

/// Annotated code plus the mapping rebased onto it, when one was supplied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotated {
    pub code: String,
    pub mapping: Option<CodeMapping>,
}

/// Removes every line carrying `marker`.
pub fn strip_comments(code: &str, marker: &str) -> String {
    code.split('\n').filter(|line| !line.contains(marker)).collect::<Vec<_>>().join("\n")
}

/// Inserts one comment per node into `code`.
///
/// `mapping` must have been computed against `code` with any earlier marker
/// lines removed; otherwise it is ignored. A mapped node's comment goes
/// directly above the first line of its first range, indented like that
/// line. Unmapped nodes are appended in pre-order after the last non-blank
/// line (or above a trailing closing brace).
pub fn insert_comments(
    code: &str,
    tree: &StepTree,
    style: &CommentStyle,
    mapping: Option<&CodeMapping>,
) -> Result<Annotated, CommentError> {
    if tree.stage != Stage::Implementation {
        return Err(CommentError::WrongStage);
    }
    let base = strip_comments(code, &style.marker);
    let mapping = mapping.filter(|m| m.is_fresh_for(&base));
    let segments: Vec<&str> = base.split('\n').collect();
    let count = line_count(&base);
    let crlf = base.contains("\r\n");
    let (tail, tail_indent) = tail_position(&segments[..count]);

    // comments keyed by the segment index they are inserted before
    let mut inserts: Vec<Vec<String>> = vec![Vec::new(); segments.len() + 1];
    let mut labels = Vec::new();
    collect_labels(&tree.roots, "", &mut labels);
    let mut unmapped = Vec::new();
    for (node, label) in labels {
        let start = mapping
            .and_then(|m| m.entries.get(&node.id))
            .and_then(|ranges| ranges.first())
            .map(|r| r.start)
            .filter(|start| (1..=count).contains(start));
        match start {
            Some(start) => {
                let line = segments[start - 1];
                let comment = render(style, indent_of(line), &label, &node.text, crlf);
                inserts[start - 1].push(comment);
            }
            None => unmapped.push(render(style, &tail_indent, &label, &node.text, crlf)),
        }
    }
    let mut at_tail = unmapped;
    at_tail.append(&mut inserts[tail]);
    inserts[tail] = at_tail;

    let mut out = Vec::with_capacity(segments.len() + tree.len());
    let mut shift = Vec::with_capacity(segments.len());
    for (index, segment) in segments.iter().enumerate() {
        out.append(&mut inserts[index]);
        shift.push(out.len() - index);
        out.push((*segment).to_string());
    }
    // code without a final newline: comments land after its last line
    if !inserts[segments.len()].is_empty() {
        out.append(&mut inserts[segments.len()]);
        if let Some(last) = out.last_mut() {
            if last.ends_with('\r') {
                last.pop();
            }
        }
    }

    let mapping = mapping.map(|m| {
        let code = out.join("\n");
        let rebase = |line: usize| line + shift[line - 1];
        CodeMapping::from_ranges(
            &code,
            m.entries.iter().map(|(node, ranges)| {
                let moved = ranges
                    .iter()
                    .filter(|r| r.end <= count)
                    .map(|r| LineRange::new(rebase(r.start), rebase(r.end)))
                    .collect();
                (node.clone(), moved)
            }),
        )
    });
    Ok(Annotated { code: out.join("\n"), mapping })
}

fn collect_labels<'a>(nodes: &'a [StepNode], prefix: &str, out: &mut Vec<(&'a StepNode, String)>) {
    for (i, node) in nodes.iter().enumerate() {
        let label = if prefix.is_empty() { format!("{}", i + 1) } else { format!("{prefix}.{}", i + 1) };
        out.push((node, label.clone()));
        collect_labels(&node.children, &label, out);
    }
}

fn render(style: &CommentStyle, indent: &str, label: &str, text: &str, crlf: bool) -> String {
    let text: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let body = if text.is_empty() { String::new() } else { format!(" {text}") };
    let cr = if crlf { "\r" } else { "" };
    format!("{indent}{} Step {label}:{body} {}{cr}", style.line_prefix, style.marker)
}

fn indent_of(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

/// Where unmapped comments go and how they are indented.
fn tail_position(lines: &[&str]) -> (usize, String) {
    let Some(last) = lines.iter().rposition(|l| !l.trim().is_empty()) else {
        return (0, String::new());
    };
    let line = lines[last];
    let indent = indent_of(line);
    let unit = if indent.starts_with('\t') { "\t" } else { "    " };
    let trimmed = line.trim();
    if trimmed.starts_with('}') {
        return (last, format!("{indent}{unit}"));
    }
    if trimmed.ends_with(':') || trimmed.ends_with('{') {
        return (last + 1, format!("{indent}{unit}"));
    }
    (last + 1, indent.to_string())
}

impl StepTree {
    /// Ids of nodes in pre-order paired with their hierarchical labels.
    pub fn labeled_nodes(&self) -> Vec<(NodeId, String)> {
        let mut labels = Vec::new();
        collect_labels(&self.roots, "", &mut labels);
        labels.into_iter().map(|(n, l)| (n.id.clone(), l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steptree::FormationStatus;

    fn implementation_tree(texts: &[&str]) -> StepTree {
        let mut tree = StepTree::new("p");
        for (i, text) in texts.iter().enumerate() {
            tree.add_step(None, i, text).unwrap();
        }
        let first = tree.roots[0].id.clone();
        tree.add_step(Some(&first), 0, "sub").unwrap();
        tree.for_each_node_mut(|n| n.formation_status = FormationStatus::Correct);
        tree.advance_stage().unwrap();
        tree
    }

    #[test]
    fn stub_gets_comments_appended_in_preorder() {
        let tree = implementation_tree(&["read input", "compute"]);
        let code = "def solve(nums):\n";
        let out = insert_comments(code, &tree, &CommentStyle::default(), None).unwrap();
        assert_eq!(
            out.code,
            "def solve(nums):\n    # Step 1: read input ⟦dbox⟧\n    # Step 1.1: sub ⟦dbox⟧\n    # Step 2: compute ⟦dbox⟧\n"
        );
        assert_eq!(line_count(&out.code), line_count(code) + tree.len());
    }

    #[test]
    fn mapped_comment_sits_above_its_range() {
        let tree = implementation_tree(&["a", "b"]);
        let code = "def f(x):\n    y = 1\n    z = 2\n    if x:\n        y = 3\n        z = 4\n    w = 5\n    return y\n";
        let b = tree.roots[1].id.clone();
        let mapping = CodeMapping::from_ranges(code, [(b, vec![LineRange::new(5, 7)])]);
        let out = insert_comments(code, &tree, &CommentStyle::default(), Some(&mapping)).unwrap();
        let lines: Vec<&str> = out.code.lines().collect();
        assert_eq!(lines[4], "        # Step 2: b ⟦dbox⟧");
        assert_eq!(lines[5], "        y = 3");
        assert_eq!(strip_comments(&out.code, DEFAULT_MARKER), code);

        let rebased = out.mapping.unwrap();
        let hover = rebased.ranges_for(&tree.roots[1].id, &out.code);
        assert!(!hover.stale);
        assert_eq!(hover.ranges, vec![LineRange::new(6, 8)]);
    }

    #[test]
    fn reinsertion_replaces_old_comments() {
        let tree = implementation_tree(&["a", "b"]);
        let code = "def f():\n    return 1";
        let style = CommentStyle::default();
        let once = insert_comments(code, &tree, &style, None).unwrap();
        let twice = insert_comments(&once.code, &tree, &style, None).unwrap();
        assert_eq!(once, twice);
        assert_eq!(strip_comments(&once.code, DEFAULT_MARKER), code);
    }

    #[test]
    fn closing_brace_keeps_comments_inside_body() {
        let tree = implementation_tree(&["a"]);
        let code = "int f() {\n    return 0;\n}\n";
        let style = CommentStyle::named("c").unwrap();
        let out = insert_comments(code, &tree, &style, None).unwrap();
        assert_eq!(
            out.code,
            "int f() {\n    return 0;\n    // Step 1: a ⟦dbox⟧\n    // Step 1.1: sub ⟦dbox⟧\n}\n"
        );
    }

    #[test]
    fn code_without_final_newline() {
        let tree = implementation_tree(&["a"]);
        let code = "x = 1";
        let out = insert_comments(code, &tree, &CommentStyle::default(), None).unwrap();
        assert_eq!(out.code, "x = 1\n# Step 1: a ⟦dbox⟧\n# Step 1.1: sub ⟦dbox⟧");
        assert_eq!(strip_comments(&out.code, DEFAULT_MARKER), code);
    }

    #[test]
    fn empty_code() {
        let tree = implementation_tree(&["a"]);
        let out = insert_comments("", &tree, &CommentStyle::default(), None).unwrap();
        assert_eq!(out.code, "# Step 1: a ⟦dbox⟧\n# Step 1.1: sub ⟦dbox⟧\n");
        assert_eq!(strip_comments(&out.code, DEFAULT_MARKER), "");
    }

    #[test]
    fn crlf_code_keeps_its_line_endings() {
        let tree = implementation_tree(&["a"]);
        let code = "def f():\r\n    return 1\r\n";
        let out = insert_comments(code, &tree, &CommentStyle::default(), None).unwrap();
        assert!(out.code.contains("# Step 1: a ⟦dbox⟧\r\n"));
        assert_eq!(strip_comments(&out.code, DEFAULT_MARKER), code);
    }

    #[test]
    fn unknown_style_and_wrong_stage() {
        assert_eq!(
            CommentStyle::named("brainfuck"),
            Err(CommentError::UnknownCommentStyle("brainfuck".into()))
        );
        let tree = StepTree::new("p");
        assert_eq!(
            insert_comments("", &tree, &CommentStyle::default(), None),
            Err(CommentError::WrongStage)
        );
    }
}

//! Versioned, line-oriented tree file format.
//!
//! ```text
//! adaptivepq-tree v1 nodes=<N> depth=<D>
//! split <feature-name> <threshold>
//! leaf <class-code>
//! ...
//! ```
//!
//! Nodes follow in preorder, one per line: a `split` line is followed by its
//! left subtree, then its right subtree. Feature names are `threads`, `size`,
//! `key_range` and `insert_pct`; class codes are 0 (neutral), 1 (oblivious)
//! and 2 (aware). Thresholds use the shortest decimal form that parses back
//! to the same value. Every line ends with `\n`.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Mode, Scalar, Tree, TreeNode, FEATURE_NAMES};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "adaptivepq-tree";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("tree file line {line}: {message}")]
pub struct TreeParseError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> TreeParseError {
    TreeParseError {
        line,
        message: message.into(),
    }
}

pub fn serialize<T: Scalar>(tree: &Tree<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} v{FORMAT_VERSION} nodes={} depth={}",
        tree.len(),
        tree.depth()
    );
    for node in tree.nodes() {
        let _ = match node {
            TreeNode::Leaf(mode) => writeln!(out, "leaf {}", mode.code()),
            TreeNode::Split { feature, threshold, .. } => {
                writeln!(out, "split {} {}", FEATURE_NAMES[*feature], threshold)
            }
        };
    }
    out
}

fn header_field(token: Option<&str>, name: &str, line: usize) -> Result<usize, TreeParseError> {
    let token = token.ok_or_else(|| err(line, format!("missing `{name}=`")))?;
    token
        .strip_prefix(name)
        .and_then(|t| t.strip_prefix('='))
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(line, format!("expected `{name}=<n>`, found `{token}`")))
}

/// Parses a tree file. Errors name the offending line.
pub fn deserialize<T: Scalar>(text: &str) -> Result<Tree<T>, TreeParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(MAGIC) {
        return Err(err(1, format!("expected `{MAGIC}` header")));
    }
    let version = tok.next().unwrap_or("");
    if version != format!("v{FORMAT_VERSION}") {
        return Err(err(
            1,
            format!("unsupported version `{version}` (expected v{FORMAT_VERSION})"),
        ));
    }
    let n_nodes = header_field(tok.next(), "nodes", 1)?;
    let depth = header_field(tok.next(), "depth", 1)?;
    if let Some(extra) = tok.next() {
        return Err(err(1, format!("unexpected header token `{extra}`")));
    }

    // Parse nodes, then patch child indices with a preorder stack.
    let mut nodes: Vec<TreeNode<T>> = Vec::with_capacity(n_nodes);
    // Split nodes whose left (false) or right (true) child is still open.
    let mut open: Vec<(usize, bool)> = Vec::new();
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        if nodes.len() == n_nodes {
            return Err(err(line, format!("more than the declared {n_nodes} nodes")));
        }
        if !nodes.is_empty() && open.is_empty() {
            return Err(err(line, "node after the tree is complete"));
        }
        let idx = nodes.len();
        let mut tok = raw.split_whitespace();
        let node = match tok.next() {
            Some("leaf") => {
                let code = tok
                    .next()
                    .and_then(|c| c.parse::<u8>().ok())
                    .and_then(Mode::from_code)
                    .ok_or_else(|| err(line, "leaf needs a class code 0, 1 or 2"))?;
                TreeNode::Leaf(code)
            }
            Some("split") => {
                let name = tok.next().ok_or_else(|| err(line, "split needs a feature"))?;
                let feature = FEATURE_NAMES
                    .iter()
                    .position(|f| *f == name)
                    .ok_or_else(|| err(line, format!("unknown feature `{name}`")))?;
                let threshold: T = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .filter(|t: &T| t.is_finite())
                    .ok_or_else(|| err(line, "split needs a finite threshold"))?;
                TreeNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                }
            }
            Some(other) => return Err(err(line, format!("unknown node kind `{other}`"))),
            None => return Err(err(line, "blank line")),
        };
        if let Some(extra) = tok.next() {
            return Err(err(line, format!("unexpected token `{extra}`")));
        }
        if let Some((parent, is_right)) = open.pop() {
            if let TreeNode::Split { left, right, .. } = &mut nodes[parent] {
                if is_right {
                    *right = idx;
                } else {
                    *left = idx;
                    open.push((parent, true));
                }
            }
        }
        let is_split = matches!(node, TreeNode::Split { .. });
        nodes.push(node);
        if is_split {
            open.push((idx, false));
        }
    }
    if nodes.len() != n_nodes || !open.is_empty() {
        return Err(err(
            last_line,
            format!("tree ends early: declared {n_nodes} nodes, found {}", nodes.len()),
        ));
    }
    let tree = Tree::from_nodes(nodes).map_err(|e| err(last_line, e.to_string()))?;
    if tree.depth() != depth {
        return Err(err(
            1,
            format!("header depth {depth} but tree depth is {}", tree.depth()),
        ));
    }
    Ok(tree)
}

use super::{ClassifyError, Features, Mode, Scalar, N_FEATURES};

/// One node of a [`Tree`]. Samples with `feature <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode<T> {
    Leaf(Mode),
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

/// Binary decision tree stored in preorder (root first, left subtree
/// immediately after its parent). Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<T> {
    nodes: Vec<TreeNode<T>>,
    depth: usize,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(mode: Mode) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf(mode)],
            depth: 0,
        }
    }

    /// Validates a preorder node array and computes its depth.
    pub fn from_nodes(nodes: Vec<TreeNode<T>>) -> Result<Self, ClassifyError> {
        let depth = validate(&nodes)?;
        Ok(Self { nodes, depth })
    }

    pub fn nodes(&self) -> &[TreeNode<T>] {
        &self.nodes
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf(_))).count()
    }

    pub fn predict(&self, features: &Features<T>) -> Mode {
        self.predict_array(&features.to_array())
    }

    pub fn predict_array(&self, x: &[T; N_FEATURES]) -> Mode {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(mode) => return mode,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

fn validate<T: Scalar>(nodes: &[TreeNode<T>]) -> Result<usize, ClassifyError> {
    let bad = |msg: String| Err(ClassifyError::MalformedTree(msg));
    if nodes.is_empty() {
        return bad("tree has no nodes".into());
    }
    let mut depth = 0;
    let mut expected = 0;
    let mut stack = vec![(0usize, 0usize)];
    while let Some((idx, d)) = stack.pop() {
        if idx != expected || idx >= nodes.len() {
            return bad(format!("node {idx} is out of preorder position (expected {expected})"));
        }
        expected += 1;
        depth = depth.max(d);
        match nodes[idx] {
            TreeNode::Leaf(_) => {}
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if feature >= N_FEATURES {
                    return bad(format!("node {idx} splits on unknown feature {feature}"));
                }
                if !threshold.is_finite() {
                    return bad(format!("node {idx} has a non-finite threshold"));
                }
                stack.push((right, d + 1));
                stack.push((left, d + 1));
            }
        }
    }
    if expected != nodes.len() {
        return bad(format!(
            "{} of {} nodes are unreachable",
            nodes.len() - expected,
            nodes.len()
        ));
    }
    Ok(depth)
}

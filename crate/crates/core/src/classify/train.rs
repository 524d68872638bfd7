use std::cmp::Ordering;

use super::{ClassifyError, Mode, Sample, Scalar, Tree, TreeNode, N_FEATURES};

/// Split-quality measure. Only Gini impurity is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    /// Nodes at this depth become leaves.
    pub max_depth: usize,
    /// Minimum number of samples on each side of a split.
    pub min_leaf: usize,
    pub criterion: Criterion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 5,
            criterion: Criterion::Gini,
        }
    }
}

/// Grows a CART tree.
///
/// At each node every feature is scanned; candidate thresholds are midpoints
/// between consecutive distinct values. The split with the lowest weighted
/// Gini impurity wins; ties keep the first candidate in (feature, threshold)
/// order. A node becomes a leaf (majority class, lowest class code on ties)
/// when it is pure, at `max_depth`, or when no split leaves `min_leaf`
/// samples on both sides.
pub fn train<T: Scalar>(samples: &[Sample<T>], config: &TrainConfig) -> Result<Tree<T>, ClassifyError> {
    if samples.is_empty() {
        return Err(ClassifyError::EmptySamples);
    }
    if config.min_leaf == 0 {
        return Err(ClassifyError::InvalidConfig("min_leaf must be at least 1"));
    }
    let mut builder = Builder {
        samples,
        config,
        nodes: Vec::new(),
    };
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    builder.grow(&mut idx, 0);
    Tree::from_nodes(builder.nodes)
}

struct Builder<'a, T> {
    samples: &'a [Sample<T>],
    config: &'a TrainConfig,
    nodes: Vec<TreeNode<T>>,
}

fn counts_of<T>(samples: &[Sample<T>], idx: &[usize]) -> [usize; 3] {
    let mut c = [0usize; 3];
    for &i in idx {
        c[samples[i].label.code() as usize] += 1;
    }
    c
}

fn majority(counts: &[usize; 3]) -> Mode {
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Mode::from_code(best as u8).expect("class index")
}

/// `sum(c_k^2) / n`; larger means purer.
fn purity(counts: &[usize; 3], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: usize = counts.iter().map(|c| c * c).sum();
    sq as f64 / n as f64
}

impl<T: Scalar> Builder<'_, T> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let me = self.nodes.len();
        let counts = counts_of(self.samples, idx);
        let classes = counts.iter().filter(|&&c| c > 0).count();
        let leaf = TreeNode::Leaf(majority(&counts));
        if classes <= 1 || depth >= self.config.max_depth || idx.len() < 2 * self.config.min_leaf {
            self.nodes.push(leaf);
            return me;
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts) else {
            self.nodes.push(leaf);
            return me;
        };
        self.nodes.push(leaf);
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.samples[i].features.get(feature) <= threshold);
        let l = self.grow(&mut left, depth + 1);
        let r = self.grow(&mut right, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        me
    }

    fn best_split(&self, idx: &[usize], total: &[usize; 3]) -> Option<(usize, T)> {
        let n = idx.len();
        let min_leaf = self.config.min_leaf;
        let mut best: Option<(f64, usize, T)> = None;
        let mut column: Vec<(T, usize)> = Vec::with_capacity(n);
        for feature in 0..N_FEATURES {
            column.clear();
            column.extend(idx.iter().map(|&i| {
                let s = &self.samples[i];
                (s.features.get(feature), s.label.code() as usize)
            }));
            column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
            let mut left = [0usize; 3];
            for i in 1..n {
                left[column[i - 1].1] += 1;
                let (lo, hi) = (column[i - 1].0, column[i].0);
                if lo >= hi || i < min_leaf || n - i < min_leaf {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
                let score = purity(&left, i) + purity(&right, n - i);
                if best.is_none_or(|(b, _, _)| score > b) {
                    let two = T::one() + T::one();
                    let mut mid = lo + (hi - lo) / two;
                    if mid >= hi {
                        mid = lo;
                    }
                    best = Some((score, feature, mid));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

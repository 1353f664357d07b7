use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Borrowed training data: a row-major feature matrix with one label per row.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    x: &'a [f32],
    n_features: usize,
    labels: &'a [usize],
    n_classes: usize,
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a [f32], n_features: usize, labels: &'a [usize], n_classes: usize) -> Result<Self> {
        if n_features == 0 || !x.len().is_multiple_of(n_features) {
            return Err(Error::shape(format!("rows × {n_features}"), x.len()));
        }
        if x.len() / n_features != labels.len() {
            return Err(Error::LengthMismatch {
                left: x.len() / n_features,
                right: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Samples {
            x,
            n_features,
            labels,
            n_classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn value(&self, row: usize, feature: usize) -> f32 {
        self.x[row * self.n_features + feature]
    }

    fn histogram(&self, indices: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Gini impurity `Σ p_i (1 − p_i)` of a class histogram, evaluated as
/// `(n² − Σ c_i²) / n²` so small histograms come out correctly rounded.
pub fn gini_impurity(counts: &[u32]) -> Result<f64> {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return Err(Error::EmptyNode);
    }
    let sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    let n2 = (n as u128) * (n as u128);
    Ok((n2 - sq) as f64 / n2 as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f32,
    pub impurity_decrease: f64,
}

/// Threshold between two consecutive distinct values `a < b`. Values equal
/// to the threshold go left, so it must satisfy `a ≤ t < b`.
pub(crate) fn midpoint(a: f32, b: f32) -> f32 {
    let m = ((a as f64 + b as f64) / 2.0) as f32;
    if m >= b {
        a
    } else {
        m
    }
}

fn sum_sq(counts: &[u32]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// `Σc_L²/n_L + Σc_R²/n_R` as an exact fraction. The weighted child impurity
/// is `1 − score/n`, so a larger score means a larger impurity decrease.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn beats(self, other: Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Best Gini split of the rows in `indices` over `candidate_features`.
///
/// Features are scanned in the order given and thresholds in ascending order;
/// a candidate replaces the incumbent only when strictly better. Scores are
/// compared as exact integer fractions so the choice does not depend on
/// floating-point rounding. Returns `None` when no split decreases impurity.
pub fn best_split(samples: &Samples<'_>, indices: &[usize], candidate_features: &[usize]) -> Option<Split> {
    let n = indices.len();
    if n < 2 {
        return None;
    }
    let parent = samples.histogram(indices);
    let parent_sq = sum_sq(&parent);
    // Parent score Σc²/n: the baseline any split must beat.
    let mut best_score = Score {
        num: parent_sq,
        den: n as u128,
    };
    let mut best: Option<(usize, f32)> = None;

    let mut order: Vec<(f32, usize)> = Vec::with_capacity(n);
    let mut left = vec![0u32; samples.n_classes];
    let mut right = vec![0u32; samples.n_classes];
    for &f in candidate_features {
        order.clear();
        order.extend(indices.iter().map(|&i| (samples.value(i, f), samples.labels[i])));
        order.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        if order[0].0 == order[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&parent);
        let mut left_sq: u128 = 0;
        let mut right_sq: u128 = parent_sq;
        for k in 0..n - 1 {
            let y = order[k].1;
            // (c+1)² − c² = 2c + 1, (c−1)² − c² = −2c + 1
            left_sq += 2 * left[y] as u128 + 1;
            right_sq -= 2 * right[y] as u128 - 1;
            left[y] += 1;
            right[y] -= 1;
            if order[k].0 == order[k + 1].0 {
                continue;
            }
            let (nl, nr) = ((k + 1) as u128, (n - k - 1) as u128);
            let score = Score {
                num: left_sq * nr + right_sq * nl,
                den: nl * nr,
            };
            if score.beats(best_score) {
                best_score = score;
                best = Some((f, midpoint(order[k].0, order[k + 1].0)));
            }
        }
    }
    best.map(|(feature, threshold)| {
        let nf = n as f64;
        let decrease = (best_score.num as f64 / best_score.den as f64 - parent_sq as f64 / nf) / nf;
        Split {
            feature,
            threshold,
            impurity_decrease: decrease,
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    /// Rows with `value ≤ threshold` go to `left`. Children are node indices.
    Internal {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf { class_histogram: Vec<u32> },
}

/// A tree stored as a pre-order node array; the root is node 0 and every
/// internal node's left child immediately follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub(crate) fn from_nodes(nodes: Vec<TreeNode>) -> Self {
        DecisionTree { nodes }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let TreeNode::Internal { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Class histogram of the leaf reached by `x`.
    pub fn leaf(&self, x: &[f32]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { class_histogram } => return class_histogram,
            }
        }
    }

    pub fn predict_class(&self, x: &[f32]) -> usize {
        let h = self.leaf(x);
        let mut best = 0;
        for (c, &v) in h.iter().enumerate() {
            if v > h[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeParams {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

struct Pending {
    indices: Vec<usize>,
    depth: usize,
    /// Parent node waiting for this node's index as its right child.
    right_of: Option<usize>,
}

/// Grows a CART tree on the rows in `indices` (repeats allowed, as produced
/// by bootstrapping). A fresh feature subset of `max_features` is drawn at
/// every node and scanned in ascending feature order.
pub fn grow_tree<R: Rng>(samples: &Samples<'_>, indices: &[usize], params: &TreeParams, rng: &mut R) -> DecisionTree {
    assert!(!indices.is_empty(), "grow_tree needs at least one row");
    let nf = samples.n_features;
    let m = params.max_features.clamp(1, nf);
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stack = vec![Pending {
        indices: indices.to_vec(),
        depth: 0,
        right_of: None,
    }];
    while let Some(Pending {
        indices,
        depth,
        right_of,
    }) = stack.pop()
    {
        let id = nodes.len();
        if let Some(parent) = right_of {
            if let TreeNode::Internal { right, .. } = &mut nodes[parent] {
                *right = id;
            }
        }
        let hist = samples.histogram(&indices);
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = params.max_depth.is_none_or(|d| depth < d);
        let split = if pure || !depth_ok || indices.len() < params.min_samples_split {
            None
        } else {
            let mut features = if m == nf {
                (0..nf).collect()
            } else {
                index::sample(rng, nf, m).into_vec()
            };
            features.sort_unstable();
            best_split(samples, &indices, &features)
        };
        match split {
            None => nodes.push(TreeNode::Leaf { class_histogram: hist }),
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| samples.value(i, s.feature) <= s.threshold);
                nodes.push(TreeNode::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: id + 1,
                    right: usize::MAX,
                });
                stack.push(Pending {
                    indices: r,
                    depth: depth + 1,
                    right_of: Some(id),
                });
                stack.push(Pending {
                    indices: l,
                    depth: depth + 1,
                    right_of: None,
                });
            }
        }
    }
    DecisionTree { nodes }
}

//! `GRRF` forest container.
//!
//! ```text
//! "GRRF" | u32 version
//! u32 n_classes | u32 feature_count
//! u32 n_trees | u32 max_features | u8 has_max_depth | u32 max_depth
//! u32 min_samples_split | u8 bootstrap | u64 seed
//! per tree: u32 n_nodes, then nodes in pre-order:
//!   0u8, n_classes × u32 counts                    (leaf)
//!   1u8, u32 feature, f32 threshold, u32 right     (internal; left child is the next node)
//! u32 crc32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use super::{DecisionTree, RandomForestModel, RfConfig, TreeNode};
use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GRRF";
pub const FOREST_FORMAT_VERSION: u32 = 1;

pub fn forest_bytes(model: &RandomForestModel) -> Vec<u8> {
    let cfg = model.config();
    let mut w = Writer::with_header(MAGIC, FOREST_FORMAT_VERSION);
    w.len_u32(model.n_classes());
    w.len_u32(model.feature_count());
    w.len_u32(cfg.n_trees);
    w.len_u32(cfg.max_features.unwrap_or(0));
    w.u8(cfg.max_depth.is_some() as u8);
    w.len_u32(cfg.max_depth.unwrap_or(0));
    w.len_u32(cfg.min_samples_split);
    w.u8(cfg.bootstrap as u8);
    w.u64(cfg.seed);
    for tree in model.trees() {
        w.len_u32(tree.nodes().len());
        for node in tree.nodes() {
            match node {
                TreeNode::Leaf { class_histogram } => {
                    w.u8(0);
                    class_histogram.iter().for_each(|&c| w.u32(c));
                }
                TreeNode::Internal {
                    feature,
                    threshold,
                    right,
                    ..
                } => {
                    w.u8(1);
                    w.len_u32(*feature);
                    w.f32(*threshold);
                    w.len_u32(*right);
                }
            }
        }
    }
    w.finish_checksummed()
}

pub fn save_forest(model: &RandomForestModel, path: &Path) -> Result<()> {
    write_atomic(path, &forest_bytes(model))
}

pub fn load_forest(path: &Path) -> Result<RandomForestModel> {
    decode(&fs::read(path)?)
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

/// Checks that `nodes` is a well-formed pre-order layout: every right index
/// points at the node right after the left subtree ends.
fn check_preorder(nodes: &[TreeNode]) -> Result<()> {
    let mut awaiting_right: Vec<usize> = Vec::new();
    for j in 0..nodes.len() {
        if j > 0 && matches!(nodes[j - 1], TreeNode::Leaf { .. }) {
            let p = awaiting_right
                .pop()
                .ok_or_else(|| malformed("nodes after the end of a tree"))?;
            match nodes[p] {
                TreeNode::Internal { right, .. } if right == j => {}
                _ => return Err(malformed(format!("node {p} has an inconsistent right child"))),
            }
        }
        if matches!(nodes[j], TreeNode::Internal { .. }) {
            awaiting_right.push(j);
        }
    }
    if !awaiting_right.is_empty() || !matches!(nodes.last(), Some(TreeNode::Leaf { .. })) {
        return Err(malformed("truncated tree"));
    }
    Ok(())
}

fn decode(bytes: &[u8]) -> Result<RandomForestModel> {
    let mut r = Reader::open_checksummed(bytes, MAGIC, FOREST_FORMAT_VERSION)?;
    let n_classes = r.usize()?;
    let feature_count = r.usize()?;
    let n_trees = r.usize()?;
    let max_features = r.usize()?;
    let has_depth = r.u8()? != 0;
    let depth = r.usize()?;
    let min_samples_split = r.usize()?;
    let bootstrap = r.u8()? != 0;
    let seed = r.u64()?;
    if n_classes == 0 || feature_count == 0 || n_trees == 0 {
        return Err(malformed("empty forest header"));
    }
    let config = RfConfig {
        n_trees,
        max_features: Some(max_features),
        max_depth: has_depth.then_some(depth),
        min_samples_split,
        bootstrap,
        seed,
    };
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.usize()?;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for i in 0..n_nodes {
            match r.u8()? {
                0 => {
                    let class_histogram = (0..n_classes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    if class_histogram.iter().all(|&c| c == 0) {
                        return Err(malformed("empty leaf"));
                    }
                    nodes.push(TreeNode::Leaf { class_histogram });
                }
                1 => {
                    let feature = r.usize()?;
                    let threshold = r.f32()?;
                    let right = r.usize()?;
                    if feature >= feature_count {
                        return Err(malformed(format!("feature index {feature} ≥ {feature_count}")));
                    }
                    nodes.push(TreeNode::Internal {
                        feature,
                        threshold,
                        left: i + 1,
                        right,
                    });
                }
                tag => return Err(malformed(format!("unknown node tag {tag}"))),
            }
        }
        check_preorder(&nodes)?;
        trees.push(DecisionTree::from_nodes(nodes));
    }
    r.expect_end()?;
    Ok(RandomForestModel::from_parts(trees, n_classes, feature_count, config))
}

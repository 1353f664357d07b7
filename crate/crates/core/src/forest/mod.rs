//! CART trees with Gini splits and a bagged random forest.

mod io;
mod tree;

pub use io::{forest_bytes, load_forest, save_forest, FOREST_FORMAT_VERSION};
pub use tree::{best_split, gini_impurity, grow_tree, DecisionTree, Samples, Split, TreeNode, TreeParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfConfig {
    pub n_trees: usize,
    /// Features sampled per node; `None` means `floor(sqrt(F))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 250,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfConfig {
    pub fn resolve_max_features(&self, n_features: usize) -> Result<usize> {
        let m = self
            .max_features
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
        if m == 0 || m > n_features {
            return Err(Error::Config(format!(
                "max_features {m} outside 1..={n_features}"
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    n_classes: usize,
    feature_count: usize,
    /// Snapshot with `max_features` resolved.
    config: RfConfig,
}

/// Generator for tree `index`: the master seed picks the key, the tree index
/// picks the ChaCha stream.
fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn fit_forest(samples: &Samples<'_>, config: &RfConfig) -> Result<RandomForestModel> {
    if samples.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    if config.min_samples_split < 2 {
        return Err(Error::Config("min_samples_split must be at least 2".into()));
    }
    let max_features = config.resolve_max_features(samples.n_features())?;
    let params = TreeParams {
        max_features,
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
    };
    let n = samples.rows();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(samples, &rows, &params, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        trees,
        n_classes: samples.n_classes(),
        feature_count: samples.n_features(),
        config: RfConfig {
            max_features: Some(max_features),
            ..config.clone()
        },
    })
}

impl RandomForestModel {
    pub(crate) fn from_parts(trees: Vec<DecisionTree>, n_classes: usize, feature_count: usize, config: RfConfig) -> Self {
        RandomForestModel {
            trees,
            n_classes,
            feature_count,
            config,
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn config(&self) -> &RfConfig {
        &self.config
    }

    fn check(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(Error::shape(self.feature_count, x.len()));
        }
        Ok(())
    }

    /// Mean of the per-tree leaf class frequencies.
    pub fn predict_proba(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut p = vec![0.0f64; self.n_classes];
        for tree in &self.trees {
            let h = tree.leaf(x);
            let total: u32 = h.iter().sum();
            for (pc, &c) in p.iter_mut().zip(h) {
                *pc += c as f64 / total as f64;
            }
        }
        let k = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= k);
        Ok(p)
    }

    /// Argmax of [`predict_proba`](Self::predict_proba), lowest index on ties.
    pub fn predict_class(&self, x: &[f32]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok((0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b }))
    }

    /// Class predictions for every row of a row-major matrix, in parallel.
    pub fn predict_rows(&self, x: &[f32]) -> Result<Vec<usize>> {
        if !x.len().is_multiple_of(self.feature_count) {
            return Err(Error::shape(format!("rows × {}", self.feature_count), x.len()));
        }
        x.par_chunks(self.feature_count)
            .map(|row| self.predict_class(row))
            .collect()
    }
}

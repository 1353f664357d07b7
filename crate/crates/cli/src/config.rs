//! Run configuration: defaults, `key = value` config files and flag overrides.
//! Every key is also a `--key` flag of the same name.

use std::fs;
use std::path::{Path, PathBuf};

use deepforest::datasetio::SynthSpec;
use deepforest::evaluate::Negatives;
use deepforest::training::TrainConfig;
use deepforest::RfConfig;

/// `(key, value name, help)` for every configurable setting.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out", "DIR", "output directory for all artifacts [default: out]"),
    ("dataset", "DIR", "dataset root holding Training/ and Test/"),
    ("seed", "U64", "master seed for splits, init, shuffling and trees [default: 0]"),
    ("image-size", "PX", "resize images to PX x PX; omit to keep the decoded size"),
    ("flood-fill", "GAP|off", "flood-fill background removal threshold [default: off]"),
    ("val-fraction", "F", "validation share of the training images [default: 0.1]"),
    ("epochs", "N", "epoch cap [default: 100]"),
    ("batch-size", "N", "mini-batch size [default: 50]"),
    ("learning-rate", "ETA", "initial learning rate [default: 0.1]"),
    ("gamma", "G", "running-average decay [default: 0.95]"),
    ("epsilon", "E", "optimizer epsilon [default: 1e-7]"),
    ("plateau-factor", "F", "learning-rate factor on a loss plateau [default: 0.5]"),
    ("plateau-patience", "N", "epochs without val-loss improvement before reducing [default: 3]"),
    ("early-stop-patience", "N", "epochs without val-accuracy improvement before stopping [default: 8]"),
    ("min-delta", "D", "minimum change counted as improvement [default: 1e-4]"),
    ("dropout", "P", "dropout after hidden dense ReLUs [default: 0]"),
    ("conv-channels", "LIST", "filters per conv layer [default: 16,32,64,128]"),
    ("kernel", "K", "conv kernel size [default: 5]"),
    ("dense-sizes", "LIST", "hidden dense widths [default: 1024,256]"),
    ("taps", "LIST", "layers whose activations form the features [default: conv4_pooled,dense1,dense2]"),
    ("trees", "N", "trees in the forest [default: 250]"),
    ("max-features", "N", "features tried per split [default: floor(sqrt(F))]"),
    ("max-depth", "N|none", "tree depth limit [default: none]"),
    ("min-samples-split", "N", "smallest node that may split [default: 2]"),
    ("bootstrap", "BOOL", "bootstrap rows per tree [default: true]"),
    ("groups", "FILE", "category groups, one `name, member, ...` line each"),
    ("negatives", "all|siblings", "negatives for category metrics [default: all]"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SynthSpec>,
    pub seed: u64,
    pub image_size: Option<usize>,
    pub flood_fill: Option<u8>,
    pub val_fraction: f64,
    pub train: TrainConfig,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub dense_sizes: Vec<usize>,
    pub taps: Vec<String>,
    pub forest: RfConfig,
    pub groups: Option<PathBuf>,
    pub negatives: Negatives,
    pub skip_train: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            dataset: None,
            synthetic: None,
            seed: 0,
            image_size: None,
            flood_fill: None,
            val_fraction: 0.1,
            train: TrainConfig::default(),
            conv_channels: vec![16, 32, 64, 128],
            kernel: 5,
            dense_sizes: vec![1024, 256],
            taps: Vec::new(),
            forest: RfConfig::default(),
            groups: None,
            negatives: Negatives::AllClasses,
            skip_train: false,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|v| num(key, v.trim()))
        .collect()
}

fn optional<T: std::str::FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>, String> {
    if value.eq_ignore_ascii_case(none) {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

impl RunConfig {
    /// Applies one setting. The seed also seeds training and the forest.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "out" => self.out = PathBuf::from(value),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "synthetic" => {
                self.synthetic = Some(value.parse().map_err(|e| format!("{e}"))?);
            }
            "seed" => self.seed = num(key, value)?,
            "image-size" => self.image_size = optional(key, value, "native")?,
            "flood-fill" => self.flood_fill = optional(key, value, "off")?,
            "val-fraction" => self.val_fraction = num(key, value)?,
            "epochs" => self.train.max_epochs = num(key, value)?,
            "batch-size" => self.train.batch_size = num(key, value)?,
            "learning-rate" => self.train.learning_rate = num(key, value)?,
            "gamma" => self.train.gamma = num(key, value)?,
            "epsilon" => self.train.epsilon = num(key, value)?,
            "plateau-factor" => self.train.plateau_factor = num(key, value)?,
            "plateau-patience" => self.train.plateau_patience = num(key, value)?,
            "early-stop-patience" => self.train.early_stop_patience = num(key, value)?,
            "min-delta" => self.train.min_delta = num(key, value)?,
            "dropout" => self.train.dropout = num(key, value)?,
            "conv-channels" => self.conv_channels = list(key, value)?,
            "kernel" => self.kernel = num(key, value)?,
            "dense-sizes" => {
                self.dense_sizes = if value.is_empty() { Vec::new() } else { list(key, value)? }
            }
            "taps" => {
                self.taps = value
                    .split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect()
            }
            "trees" => self.forest.n_trees = num(key, value)?,
            "max-features" => self.forest.max_features = optional(key, value, "auto")?,
            "max-depth" => self.forest.max_depth = optional(key, value, "none")?,
            "min-samples-split" => self.forest.min_samples_split = num(key, value)?,
            "bootstrap" => self.forest.bootstrap = num(key, value)?,
            "groups" => self.groups = Some(PathBuf::from(value)),
            "negatives" => {
                self.negatives = match value {
                    "all" => Negatives::AllClasses,
                    "siblings" => Negatives::Siblings,
                    other => return Err(format!("negatives must be `all` or `siblings`, got `{other}`")),
                }
            }
            "skip-train" => self.skip_train = num(key, value)?,
            other => return Err(format!("unknown setting `{other}`")),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment line. Relative paths
    /// in the file stay relative to the working directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), n + 1))?;
            self.set(key.trim(), value)
                .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn forest_config(&self) -> RfConfig {
        RfConfig {
            seed: self.seed,
            ..self.forest.clone()
        }
    }
}

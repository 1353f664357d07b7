//! The pipeline stages. Each reads its inputs from, and writes its outputs
//! to, the run's output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use deepforest::cnn4::{extract_deep_features, load_model, save_model};
use deepforest::datasetio::{
    generate_synthetic, load_images, read_index_csv, scan_directory_tree, write_index_csv, DatasetIndex, Record,
    Split, SplitSpec, GROUPS_FILE,
};
use deepforest::evaluate::{
    accuracy, category_metrics_csv, category_metrics_text, category_report, compare_models, comparison_csv,
    comparison_text, fruits360_groups, parse_groups, write_report, CategoryGroup, ModelComparison,
};
use deepforest::forest::{fit_forest, load_forest, save_forest, Samples};
use deepforest::imaging::ImagingConfig;
use deepforest::training::{argmax, evaluate_set, train_model_with, write_history_csv, LabeledImages};
use deepforest::{write_atomic, Cnn4Config, Cnn4Model, FeatureMatrix, RandomForestModel, Tensor};

use crate::config::RunConfig;
use crate::{CliError, EXIT_EVALUATE, EXIT_EXTRACT, EXIT_FIT_FOREST, EXIT_PREPARE, EXIT_TRAIN};

pub const MODEL_NAME: &str = "4-layer CNN";

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.grnm")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.txt")
    }
    pub fn features(&self, split: Split) -> PathBuf {
        self.root.join(format!("features_{}.grfx", split.as_str()))
    }
    pub fn forest(&self) -> PathBuf {
        self.root.join("forest.grrf")
    }
    pub fn forest_summary(&self) -> PathBuf {
        self.root.join("forest_summary.txt")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn comparison_csv(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }
    pub fn comparison_txt(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }
    pub fn category_csv(&self) -> PathBuf {
        self.root.join("category_metrics.csv")
    }
    pub fn category_txt(&self) -> PathBuf {
        self.root.join("category_metrics.txt")
    }
    pub fn category_softmax_csv(&self) -> PathBuf {
        self.root.join("category_metrics_softmax.csv")
    }
    pub fn category_softmax_txt(&self) -> PathBuf {
        self.root.join("category_metrics_softmax.txt")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }
}

/// Test-set accuracies of both heads, as fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub softmax_accuracy: f64,
    pub forest_accuracy: f64,
}

pub struct Context<'a> {
    pub cfg: RunConfig,
    pub paths: Artifacts,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

fn fail(code: i32) -> impl Fn(deepforest::Error) -> CliError {
    move |e| CliError::new(code, e)
}

fn labels(records: &[Record]) -> Vec<usize> {
    records.iter().map(|r| r.label).collect()
}

fn fraction(v: f64) -> String {
    format!("{v:.6}")
}

impl<'a> Context<'a> {
    pub fn new(cfg: RunConfig, out: &'a mut dyn Write, err: &'a mut dyn Write) -> Self {
        let paths = Artifacts::new(cfg.out.clone());
        Context { cfg, paths, out, err }
    }

    fn wrote(&mut self, path: &Path) {
        let _ = writeln!(self.out, "wrote {}", path.display());
    }

    fn imaging(&self) -> ImagingConfig {
        ImagingConfig {
            size: self.cfg.image_size.map(|s| (s, s)),
            flood_fill: self.cfg.flood_fill,
        }
    }

    fn ensure_out(&self, code: i32) -> Result<(), CliError> {
        fs::create_dir_all(&self.paths.root)
            .map_err(|e| CliError::new(code, format!("cannot create {}: {e}", self.paths.root.display())))
    }

    fn index(&self, code: i32) -> Result<DatasetIndex, CliError> {
        let path = self.paths.index();
        if !path.exists() {
            return Err(CliError::new(
                code,
                format!("{} not found; run `deepforest prepare` first", path.display()),
            ));
        }
        read_index_csv(&path, None).map_err(fail(code))
    }

    fn images(&self, index: &DatasetIndex, records: &[Record], code: i32) -> Result<Vec<Tensor>, CliError> {
        load_images(&index.root, records, &self.imaging()).map_err(fail(code))
    }

    fn load_model(&self, code: i32) -> Result<Cnn4Model, CliError> {
        let path = self.paths.model();
        load_model(&path).map_err(|e| CliError::new(code, format!("{}: {e}", path.display())))
    }

    /// Indexes the dataset (generating it first for synthetic runs), carves
    /// out the validation split and writes `index.csv`.
    pub fn prepare(&mut self) -> Result<DatasetIndex, CliError> {
        let code = EXIT_PREPARE;
        self.ensure_out(code)?;
        let index = match (&self.cfg.synthetic, &self.cfg.dataset) {
            (Some(spec), dataset) => {
                let root = dataset.clone().unwrap_or_else(|| self.paths.dataset());
                let _ = writeln!(self.err, "generating synthetic dataset ({spec}) in {}", root.display());
                generate_synthetic(spec, &root).map_err(fail(code))?
            }
            (None, Some(root)) => scan_directory_tree(root).map_err(fail(code))?,
            (None, None) => {
                return Err(CliError::new(code, "no dataset: pass --dataset DIR or --synthetic KEY=VALUE..."))
            }
        };
        let index = if self.cfg.val_fraction > 0.0 {
            let spec = SplitSpec {
                fraction: self.cfg.val_fraction,
                seed: self.cfg.seed,
                stratified: true,
            };
            index.with_validation(&spec).map_err(fail(code))?
        } else {
            index
        };
        let path = self.paths.index();
        write_index_csv(&index, &path).map_err(fail(code))?;
        let _ = writeln!(
            self.err,
            "{} classes: {} train, {} val, {} test images",
            index.n_classes(),
            index.train.len(),
            index.val.len(),
            index.test.len()
        );
        self.wrote(&path);
        Ok(index)
    }

    /// Trains the CNN and writes the model, its history and a summary.
    pub fn train(&mut self) -> Result<Cnn4Model, CliError> {
        let code = EXIT_TRAIN;
        self.ensure_out(code)?;
        let index = self.index(code)?;
        let train_images = self.images(&index, &index.train, code)?;
        let val_images = self.images(&index, &index.val, code)?;
        let test_images = self.images(&index, &index.test, code)?;
        let (train_labels, val_labels, test_labels) = (labels(&index.train), labels(&index.val), labels(&index.test));
        let shape = train_images
            .first()
            .ok_or_else(|| CliError::new(code, "the training split is empty"))?
            .shape()
            .to_vec();
        let net = Cnn4Config {
            input_shape: [shape[0], shape[1], shape[2]],
            conv_channels: self.cfg.conv_channels.clone(),
            kernel: self.cfg.kernel,
            dense_sizes: self.cfg.dense_sizes.clone(),
            num_classes: index.n_classes(),
        };
        let model = Cnn4Model::build(net, self.cfg.seed).map_err(fail(code))?;
        let train = LabeledImages::new(&train_images, &train_labels).map_err(fail(code))?;
        let val = LabeledImages::new(&val_images, &val_labels).map_err(fail(code))?;
        let tc = self.cfg.train_config();
        let err = &mut *self.err;
        let outcome = train_model_with(model, train, val, &tc, |r| {
            let _ = writeln!(
                err,
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  lr {}",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.learning_rate
            );
        })
        .map_err(fail(code))?;

        let model_path = self.paths.model();
        save_model(&outcome.model, &model_path).map_err(fail(code))?;
        self.wrote(&model_path);
        let mut history = Vec::new();
        write_history_csv(&outcome.history, &mut history).map_err(fail(code))?;
        let history_path = self.paths.history();
        write_atomic(&history_path, &history).map_err(fail(code))?;
        self.wrote(&history_path);

        let mut summary = format!(
            "epochs_run: {}\nbest_epoch: {}\n",
            outcome.history.len(),
            outcome.best_epoch
        );
        for (name, images, labels) in [("val", &val_images, &val_labels), ("test", &test_images, &test_labels)] {
            if images.is_empty() {
                summary.push_str(&format!("{name}_softmax_accuracy: NA\n"));
                continue;
            }
            let (_, acc) = evaluate_set(&outcome.model, LabeledImages::new(images, labels).map_err(fail(code))?)
                .map_err(fail(code))?;
            summary.push_str(&format!("{name}_softmax_accuracy: {}\n", fraction(acc)));
        }
        let summary_path = self.paths.train_summary();
        write_atomic(&summary_path, summary.as_bytes()).map_err(fail(code))?;
        self.wrote(&summary_path);
        Ok(outcome.model)
    }

    /// Writes one feature matrix per non-empty split.
    pub fn extract(&mut self) -> Result<(), CliError> {
        let code = EXIT_EXTRACT;
        let model = self.load_model(code)?;
        let index = self.index(code)?;
        if model.num_classes() != index.n_classes() {
            return Err(CliError::new(
                code,
                format!(
                    "model predicts {} classes but the index has {}",
                    model.num_classes(),
                    index.n_classes()
                ),
            ));
        }
        let taps = if self.cfg.taps.is_empty() {
            model.default_taps()
        } else {
            self.cfg.taps.clone()
        };
        for split in [Split::Train, Split::Val, Split::Test] {
            let records = index.split(split);
            if records.is_empty() {
                continue;
            }
            let images = self.images(&index, records, code)?;
            let expected = model.config().input_shape;
            if let Some(bad) = images.iter().find(|im| im.shape() != expected) {
                return Err(CliError::new(
                    code,
                    format!(
                        "{} images are {:?} but the model expects {:?}; check --image-size",
                        split.as_str(),
                        bad.shape(),
                        expected
                    ),
                ));
            }
            let features = extract_deep_features(&model, &images, &taps).map_err(fail(code))?;
            let path = self.paths.features(split);
            features.save(&path).map_err(fail(code))?;
            self.wrote(&path);
        }
        Ok(())
    }

    fn features(&self, split: Split, expected_rows: usize, code: i32) -> Result<FeatureMatrix, CliError> {
        let path = self.paths.features(split);
        let m = FeatureMatrix::load(&path).map_err(|e| CliError::new(code, format!("{}: {e}", path.display())))?;
        if m.rows() != expected_rows {
            return Err(CliError::new(
                code,
                format!(
                    "{} has {} rows but the index lists {} {} images",
                    path.display(),
                    m.rows(),
                    expected_rows,
                    split.as_str()
                ),
            ));
        }
        Ok(m)
    }

    /// Fits the forest on the training features.
    pub fn fit_forest(&mut self) -> Result<RandomForestModel, CliError> {
        let code = EXIT_FIT_FOREST;
        let index = self.index(code)?;
        let train = self.features(Split::Train, index.train.len(), code)?;
        let y = labels(&index.train);
        let samples = Samples::new(train.data(), train.cols(), &y, index.n_classes()).map_err(fail(code))?;
        let forest = fit_forest(&samples, &self.cfg.forest_config()).map_err(fail(code))?;
        let path = self.paths.forest();
        save_forest(&forest, &path).map_err(fail(code))?;
        self.wrote(&path);

        let cfg = forest.config();
        let mut summary = format!(
            "n_trees: {}\nmax_features: {}\nfeature_count: {}\n",
            cfg.n_trees,
            cfg.max_features.unwrap_or_default(),
            forest.feature_count()
        );
        if index.val.is_empty() {
            summary.push_str("val_forest_accuracy: NA\n");
        } else {
            let val = self.features(Split::Val, index.val.len(), code)?;
            let pred = forest.predict_rows(val.data()).map_err(fail(code))?;
            let acc = accuracy(&labels(&index.val), &pred).map_err(fail(code))?;
            summary.push_str(&format!("val_forest_accuracy: {}\n", fraction(acc)));
        }
        let summary_path = self.paths.forest_summary();
        write_atomic(&summary_path, summary.as_bytes()).map_err(fail(code))?;
        self.wrote(&summary_path);
        Ok(forest)
    }

    /// `--groups` wins, then the dataset's own groups file, then the built-in
    /// Fruits-360 categories restricted to the classes present.
    fn groups(&self, index: &DatasetIndex, code: i32) -> Result<Vec<CategoryGroup>, CliError> {
        let from_file = |path: &Path| -> Result<Vec<CategoryGroup>, CliError> {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::new(code, format!("cannot read {}: {e}", path.display())))?;
            let groups = parse_groups(&text).map_err(|e| CliError::new(code, format!("{}: {e}", path.display())))?;
            for g in &groups {
                g.resolve(&index.class_names)
                    .map_err(|e| CliError::new(code, format!("{}: {e}", path.display())))?;
            }
            Ok(groups)
        };
        if let Some(path) = &self.cfg.groups {
            return from_file(path);
        }
        let local = index.root.join(GROUPS_FILE);
        if local.is_file() {
            return from_file(&local);
        }
        Ok(fruits360_groups()
            .iter()
            .filter_map(|g| g.restrict_to(&index.class_names))
            .collect())
    }

    /// Scores both heads on the test split and writes the comparison and
    /// per-category reports.
    pub fn evaluate(&mut self) -> Result<EvalSummary, CliError> {
        let code = EXIT_EVALUATE;
        let model = self.load_model(code)?;
        let forest = load_forest(&self.paths.forest()).map_err(fail(code))?;
        let index = self.index(code)?;
        if index.test.is_empty() {
            return Err(CliError::new(code, "the test split is empty"));
        }
        let test = self.features(Split::Test, index.test.len(), code)?;
        if test.cols() != forest.feature_count() {
            return Err(CliError::new(
                code,
                format!(
                    "test features have {} columns but the forest was fit on {}",
                    test.cols(),
                    forest.feature_count()
                ),
            ));
        }
        if forest.n_classes() != index.n_classes() || model.num_classes() != index.n_classes() {
            return Err(CliError::new(code, "model, forest and index disagree on the number of classes"));
        }
        let truth = labels(&index.test);
        let images = self.images(&index, &index.test, code)?;
        let softmax: Vec<usize> = images
            .par_iter()
            .map(|im| model.predict_proba(im).map(|p| argmax(p.data())))
            .collect::<deepforest::Result<_>>()
            .map_err(fail(code))?;
        let ensemble = forest.predict_rows(test.data()).map_err(fail(code))?;
        let summary = EvalSummary {
            softmax_accuracy: accuracy(&truth, &softmax).map_err(fail(code))?,
            forest_accuracy: accuracy(&truth, &ensemble).map_err(fail(code))?,
        };

        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::new(code, e);
        w.write_record(["path", "label", "softmax", "forest"]).map_err(csv_err)?;
        for ((r, s), f) in index.test.iter().zip(&softmax).zip(&ensemble) {
            w.write_record([r.path.clone(), r.label.to_string(), s.to_string(), f.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::new(code, e))?;
        self.report(&self.paths.predictions(), &bytes, code)?;

        let rows = compare_models(&[ModelComparison {
            model: MODEL_NAME.to_string(),
            baseline: summary.softmax_accuracy * 100.0,
            ensemble: summary.forest_accuracy * 100.0,
        }])
        .map_err(fail(code))?;
        self.report(&self.paths.comparison_csv(), &comparison_csv(&rows).map_err(fail(code))?, code)?;
        self.report(&self.paths.comparison_txt(), comparison_text(&rows).as_bytes(), code)?;

        let groups = self.groups(&index, code)?;
        let negatives = self.cfg.negatives;
        for (pred, csv_path, txt_path, label) in [
            (&ensemble, self.paths.category_csv(), self.paths.category_txt(), "forest"),
            (
                &softmax,
                self.paths.category_softmax_csv(),
                self.paths.category_softmax_txt(),
                "softmax",
            ),
        ] {
            let cats = category_report(&truth, pred, &index.class_names, &groups, negatives).map_err(fail(code))?;
            let name = format!("{MODEL_NAME} ({label})");
            self.report(&csv_path, &category_metrics_csv(&name, &cats).map_err(fail(code))?, code)?;
            self.report(&txt_path, category_metrics_text(&name, &cats).as_bytes(), code)?;
        }
        let _ = write!(self.out, "{}", comparison_text(&rows));
        Ok(summary)
    }

    fn report(&mut self, path: &Path, bytes: &[u8], code: i32) -> Result<(), CliError> {
        write_report(path, bytes).map_err(fail(code))?;
        self.wrote(path);
        Ok(())
    }

    /// All stages in order, then `summary.txt`.
    pub fn pipeline(&mut self) -> Result<EvalSummary, CliError> {
        self.prepare()?;
        if self.cfg.skip_train && self.paths.model().exists() {
            let _ = writeln!(self.err, "reusing {}", self.paths.model().display());
        } else {
            self.train()?;
        }
        self.extract()?;
        self.fit_forest()?;
        let s = self.evaluate()?;
        let text = format!(
            "softmax_test_accuracy: {}\nforest_test_accuracy: {}\ndelta_pp: {:+.4}\n",
            fraction(s.softmax_accuracy),
            fraction(s.forest_accuracy),
            (s.forest_accuracy - s.softmax_accuracy) * 100.0
        );
        let path = self.paths.summary();
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::new(EXIT_EVALUATE, e))?;
        self.wrote(&path);
        Ok(s)
    }
}

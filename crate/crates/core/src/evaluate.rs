//! One-vs-rest confusion counts, per-class metrics, category macro averages
//! and the accuracy comparison report.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::write_atomic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Each metric is `None` when its denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_counts(truth: &[usize], predicted: &[usize], positive: usize) -> Result<ConfusionCounts> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t == positive, p == positive) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn compute_metrics(c: &ConfusionCounts) -> MetricSet {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // 2PR/(P+R) rewritten as 2tp/(2tp+fp+fn): one rounding instead of four.
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) if c.tp > 0 => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    MetricSet {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        specificity: ratio(c.tn, c.tn + c.fp),
        f1,
    }
}

/// Which samples count as negatives for a category's subclasses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Negatives {
    /// Every other class in the evaluated set.
    #[default]
    AllClasses,
    /// Only samples whose true class belongs to the same category.
    Siblings,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryGroup {
    pub name: String,
    pub members: Vec<String>,
}

impl CategoryGroup {
    pub fn new(name: impl Into<String>, members: &[&str]) -> Self {
        CategoryGroup {
            name: name.into(),
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }

    /// Label ids of the members, looked up in `class_names`.
    pub fn resolve(&self, class_names: &[String]) -> Result<Vec<usize>> {
        self.members
            .iter()
            .map(|m| {
                class_names
                    .iter()
                    .position(|c| c == m)
                    .ok_or_else(|| Error::UnknownSubclass(m.clone()))
            })
            .collect()
    }

    /// Keeps only members present in `class_names`; `None` if none are.
    pub fn restrict_to(&self, class_names: &[String]) -> Option<CategoryGroup> {
        let members: Vec<String> = self
            .members
            .iter()
            .filter(|m| class_names.contains(m))
            .cloned()
            .collect();
        (!members.is_empty()).then(|| CategoryGroup {
            name: self.name.clone(),
            members,
        })
    }
}

/// Fruits-360 categories of visually similar subclasses.
pub fn fruits360_groups() -> Vec<CategoryGroup> {
    vec![
        CategoryGroup::new(
            "Apple",
            &[
                "Apple Braeburn",
                "Apple Crimson Snow",
                "Apple Golden 1",
                "Apple Golden 2",
                "Apple Golden 3",
                "Apple Granny Smith",
                "Apple Pink Lady",
                "Apple Red 1",
                "Apple Red 2",
                "Apple Red 3",
                "Apple Red Delicious",
                "Apple Red Yellow 1",
                "Apple Red Yellow 2",
            ],
        ),
        CategoryGroup::new(
            "Cherry",
            &[
                "Cherry 1",
                "Cherry 2",
                "Cherry Rainier",
                "Cherry Wax Black",
                "Cherry Wax Red",
                "Cherry Wax Yellow",
            ],
        ),
        CategoryGroup::new(
            "Grape",
            &[
                "Grape Blue",
                "Grape Pink",
                "Grape White",
                "Grape White 2",
                "Grape White 3",
                "Grape White 4",
            ],
        ),
        CategoryGroup::new(
            "Pear",
            &[
                "Pear",
                "Pear Abate",
                "Pear Forelle",
                "Pear Kaiser",
                "Pear Monster",
                "Pear Red",
                "Pear Williams",
            ],
        ),
        CategoryGroup::new(
            "Tomato",
            &[
                "Tomato 1",
                "Tomato 2",
                "Tomato 3",
                "Tomato 4",
                "Tomato Cherry Red",
                "Tomato Maroon",
                "Tomato Yellow",
            ],
        ),
    ]
}

/// Parses one group per line: `name, member, member, ...`. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_groups(text: &str) -> Result<Vec<CategoryGroup>> {
    let mut groups: Vec<CategoryGroup> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let name = parts.next().unwrap_or_default().to_string();
        let members: Vec<String> = parts.filter(|m| !m.is_empty()).map(String::from).collect();
        if name.is_empty() || members.is_empty() {
            return Err(Error::Config(format!("groups line {}: expected `name, member, ...`", n + 1)));
        }
        let taken = groups.iter().flat_map(|g| &g.members).find(|m| members.contains(m));
        if let Some(m) = taken {
            return Err(Error::Config(format!("subclass `{m}` appears in more than one group")));
        }
        groups.push(CategoryGroup { name, members });
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMetrics {
    pub category: String,
    pub n_classes: usize,
    pub averages: MetricSet,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Unweighted mean over member subclasses of each one-vs-rest metric,
/// skipping undefined values.
pub fn category_macro_metrics(
    truth: &[usize],
    predicted: &[usize],
    members: &[usize],
    negatives: Negatives,
) -> Result<MetricSet> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    let (t, p): (Vec<usize>, Vec<usize>) = match negatives {
        Negatives::AllClasses => (truth.to_vec(), predicted.to_vec()),
        Negatives::Siblings => truth
            .iter()
            .zip(predicted)
            .filter(|(t, _)| members.contains(t))
            .map(|(&t, &p)| (t, p))
            .unzip(),
    };
    let per: Vec<MetricSet> = members
        .iter()
        .map(|&m| confusion_counts(&t, &p, m).map(|c| compute_metrics(&c)))
        .collect::<Result<_>>()?;
    Ok(MetricSet {
        accuracy: mean_defined(per.iter().map(|m| m.accuracy)),
        precision: mean_defined(per.iter().map(|m| m.precision)),
        recall: mean_defined(per.iter().map(|m| m.recall)),
        specificity: mean_defined(per.iter().map(|m| m.specificity)),
        f1: mean_defined(per.iter().map(|m| m.f1)),
    })
}

/// Category metrics for every group, resolving member names strictly.
pub fn category_report(
    truth: &[usize],
    predicted: &[usize],
    class_names: &[String],
    groups: &[CategoryGroup],
    negatives: Negatives,
) -> Result<Vec<CategoryMetrics>> {
    groups
        .iter()
        .map(|g| {
            let members = g.resolve(class_names)?;
            Ok(CategoryMetrics {
                category: g.name.clone(),
                n_classes: members.len(),
                averages: category_macro_metrics(truth, predicted, &members, negatives)?,
            })
        })
        .collect()
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(truth.iter().zip(predicted).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

/// Test accuracies in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelComparison {
    pub model: String,
    pub baseline: f64,
    pub ensemble: f64,
}

/// Percent value in units of 1e-4, the printed precision.
fn ten_thousandths(percent: f64) -> i64 {
    (percent * 1e4).round() as i64
}

fn fixed4(units: i64) -> String {
    let sign = if units < 0 { "-" } else { "" };
    let a = units.unsigned_abs();
    format!("{sign}{}.{:04}", a / 10_000, a % 10_000)
}

fn signed4(units: i64) -> String {
    if units >= 0 {
        format!("+{}", fixed4(units))
    } else {
        fixed4(units)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub baseline: String,
    pub ensemble: String,
    pub delta: String,
}

/// Rounds both accuracies to four decimals and takes the delta of the
/// rounded values, so the printed delta is exactly the printed difference.
pub fn compare_models(results: &[ModelComparison]) -> Result<Vec<ComparisonRow>> {
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(results
        .iter()
        .map(|r| {
            let (b, e) = (ten_thousandths(r.baseline), ten_thousandths(r.ensemble));
            ComparisonRow {
                model: r.model.clone(),
                baseline: fixed4(b),
                ensemble: fixed4(e),
                delta: signed4(e - b),
            }
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "softmax_accuracy", "ensemble_accuracy", "delta_pp"])?;
    for r in rows {
        w.write_record([&r.model, &r.baseline, &r.ensemble, &r.delta])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let header = ["Model", "Softmax (%)", "Ensemble (%)", "Delta (pp)"];
    let cells: Vec<[&str; 4]> = rows
        .iter()
        .map(|r| [r.model.as_str(), &r.baseline, &r.ensemble, &r.delta])
        .collect();
    render_table(&header, &cells)
}

fn render_table<const N: usize>(header: &[&str; N], rows: &[[&str; N]]) -> String {
    let mut widths = header.map(|h| h.chars().count());
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str; N]| {
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(header);
    for r in rows {
        line(r);
    }
    out
}

/// Undefined metrics print as `NA`.
pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

fn category_cells(m: &CategoryMetrics) -> [String; 7] {
    let a = &m.averages;
    [
        m.category.clone(),
        m.n_classes.to_string(),
        format_metric(a.accuracy),
        format_metric(a.precision),
        format_metric(a.recall),
        format_metric(a.f1),
        format_metric(a.specificity),
    ]
}

pub fn category_metrics_csv(model: &str, rows: &[CategoryMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "category", "n_classes", "accuracy", "precision", "recall", "f1", "specificity"])?;
    for r in rows {
        let cells = category_cells(r);
        w.write_record(std::iter::once(model).chain(cells.iter().map(String::as_str)))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn category_metrics_text(model: &str, rows: &[CategoryMetrics]) -> String {
    let header = ["Model", "Category", "Classes", "Accuracy", "Precision", "Recall", "F1", "Specificity"];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            let [c, n, a, p, re, f, s] = category_cells(r);
            [model.to_string(), c, n, a, p, re, f, s]
        })
        .collect();
    let refs: Vec<[&str; 8]> = cells.iter().map(|r| r.each_ref().map(String::as_str)).collect();
    render_table(&header, &refs)
}

pub fn write_report(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

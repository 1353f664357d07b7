//! Dataset directory trees (`Training/<class>/*`, `Test/<class>/*`),
//! validation splits, image batches and the index CSV.

mod synth;

pub use synth::{generate_synthetic, SynthSpec, GROUPS_FILE};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{load_image, preprocess, ImagingConfig};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Malformed(format!("unknown split `{other}`"))),
        }
    }
}

/// One image: path relative to the dataset root, `/`-separated.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Record {
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Directory,
    Synthetic { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted; the position is the label id.
    pub class_names: Vec<String>,
    pub train: Vec<Record>,
    /// Empty until [`DatasetIndex::with_validation`] carves it out of `train`.
    pub val: Vec<Record>,
    pub test: Vec<Record>,
    pub provenance: Provenance,
}

impl DatasetIndex {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> &[Record] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn absolute(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Moves a stratified validation slice out of the training records.
    pub fn with_validation(mut self, spec: &SplitSpec) -> Result<Self> {
        let (train, val) = make_validation_split(&self, spec)?;
        self.train = train;
        self.val = val;
        Ok(self)
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn sorted_images(path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name)
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if entry.file_type()?.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Indexes `root/Training` and `root/Test`. Class names come from the
/// Training folders (sorted, label = position); every Test folder must name
/// a Training class.
pub fn scan_directory_tree(root: &Path) -> Result<DatasetIndex> {
    let training = root.join("Training");
    let test = root.join("Test");
    if !training.is_dir() || !test.is_dir() {
        return Err(Error::MissingSplit(root.to_path_buf()));
    }
    let class_names = sorted_dirs(&training)?;
    if class_names.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut train = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let files = sorted_images(&training.join(class))?;
        if files.is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        train.extend(files.into_iter().map(|f| Record {
            path: format!("Training/{class}/{f}"),
            label,
        }));
    }
    let mut test_records = Vec::new();
    for class in sorted_dirs(&test)? {
        let label = class_names
            .binary_search(&class)
            .map_err(|_| Error::UnknownTestClass(class.clone()))?;
        let files = sorted_images(&test.join(&class))?;
        if files.is_empty() {
            return Err(Error::EmptyClass(format!("Test/{class}")));
        }
        test_records.extend(files.into_iter().map(|f| Record {
            path: format!("Test/{class}/{f}"),
            label,
        }));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        class_names,
        train,
        val: Vec::new(),
        test: test_records,
        provenance: Provenance::Directory,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fraction: 0.1,
            seed: 0,
            stratified: true,
        }
    }
}

/// Validation records taken from a group of `n` training records.
fn holdout_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Splits the training records into (train, validation). Each class is
/// shuffled with its own seeded stream and its first `round(fraction·n)`
/// records (at least one, leaving at least one) are held out. Both outputs
/// keep the original record order.
pub fn make_validation_split(index: &DatasetIndex, spec: &SplitSpec) -> Result<(Vec<Record>, Vec<Record>)> {
    if !(spec.fraction > 0.0 && spec.fraction <= 0.5) {
        return Err(Error::Config(format!(
            "validation fraction {} outside (0, 0.5]",
            spec.fraction
        )));
    }
    let all: Vec<Record> = index.train.iter().chain(&index.val).cloned().collect();
    let mut held = vec![false; all.len()];
    let groups: Vec<Vec<usize>> = if spec.stratified {
        (0..index.n_classes())
            .map(|c| (0..all.len()).filter(|&i| all[i].label == c).collect())
            .collect()
    } else {
        vec![(0..all.len()).collect()]
    };
    for (g, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            let name = index.class_names.get(g).cloned().unwrap_or_default();
            return Err(Error::ClassTooSmall(name));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(g as u64);
        members.shuffle(&mut rng);
        for &i in &members[..holdout_count(members.len(), spec.fraction)] {
            held[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = all.into_iter().zip(held).partition(|(_, h)| *h);
    Ok((
        train.into_iter().map(|(r, _)| r).collect(),
        val.into_iter().map(|(r, _)| r).collect(),
    ))
}

/// Preprocessed images in record order, decoded in parallel.
pub fn load_images(root: &Path, records: &[Record], config: &ImagingConfig) -> Result<Vec<Tensor>> {
    records
        .par_iter()
        .map(|r| {
            let path = root.join(&r.path);
            preprocess(&load_image(&path)?, config).map_err(|e| Error::Decode {
                path,
                message: e.to_string(),
            })
        })
        .collect()
}

/// A stack of preprocessed images, `[N, H, W, 4]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    /// `None` for an empty batch, which has no tensor form.
    pub fn to_tensor(&self) -> Option<Tensor> {
        (!self.is_empty()).then(|| Tensor::new(self.shape.to_vec(), self.data.clone()).expect("consistent batch"))
    }
}

pub fn load_batch(root: &Path, records: &[Record], config: &ImagingConfig) -> Result<Batch> {
    let images = load_images(root, records, config)?;
    let [h, w] = match images.first() {
        Some(t) => [t.shape()[0], t.shape()[1]],
        None => [0, 0],
    };
    if let Some(bad) = images.iter().position(|t| t.shape()[..2] != [h, w]) {
        return Err(Error::Decode {
            path: root.join(&records[bad].path),
            message: format!("size differs from the first image ({h}x{w}); set an image size"),
        });
    }
    let mut data = Vec::with_capacity(images.len() * h * w * 4);
    images.iter().for_each(|t| data.extend_from_slice(t.data()));
    Ok(Batch {
        shape: [images.len(), h, w, 4],
        data,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// Index CSV: a `# root: <dir>` comment line, then
/// `path,split,label,class_name` rows in split order train, val, test.
pub fn index_csv_bytes(index: &DatasetIndex) -> Result<Vec<u8>> {
    index_csv_with_root(index, &index.root)
}

fn index_csv_with_root(index: &DatasetIndex, root: &Path) -> Result<Vec<u8>> {
    let mut out = format!("# root: {}\n", root.display()).into_bytes();
    if let Provenance::Synthetic { seed } = index.provenance {
        out.extend(format!("# synthetic seed: {seed}\n").bytes());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "split", "label", "class_name"])?;
    for split in [Split::Train, Split::Val, Split::Test] {
        for r in index.split(split) {
            w.write_record([
                r.path.as_str(),
                split.as_str(),
                &r.label.to_string(),
                &index.class_names[r.label],
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes the index CSV. A root inside the CSV's own directory is recorded
/// relative to it, so the output directory can be moved as a whole.
pub fn write_index_csv(index: &DatasetIndex, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let root = match index.root.strip_prefix(base) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel,
        _ => &index.root,
    };
    crate::codec::write_atomic(path, &index_csv_with_root(index, root)?)
}

/// Reads an index CSV. Relative `root` lines resolve against the CSV's
/// directory; `root_override` replaces the recorded root entirely.
pub fn read_index_csv(path: &Path, root_override: Option<&Path>) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path)?;
    let mut root: Option<PathBuf> = None;
    let mut provenance = Provenance::Directory;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(r) = line.strip_prefix("# root: ") {
            root = Some(PathBuf::from(r));
        } else if let Some(s) = line.strip_prefix("# synthetic seed: ") {
            let seed = s.trim().parse().map_err(|_| Error::Malformed(format!("bad seed line `{line}`")))?;
            provenance = Provenance::Synthetic { seed };
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let root = match (root_override, root) {
        (Some(r), _) => r.to_path_buf(),
        (None, Some(r)) if r.is_absolute() => r,
        (None, Some(r)) => base.join(r),
        (None, None) => base.to_path_buf(),
    };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut names: Vec<Option<String>> = Vec::new();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::Malformed(format!("index row with {} fields", row.len())));
        }
        let label: usize = row[2]
            .parse()
            .map_err(|_| Error::Malformed(format!("bad label `{}`", &row[2])))?;
        if names.len() <= label {
            names.resize(label + 1, None);
        }
        match &names[label] {
            Some(n) if n != &row[3] => {
                return Err(Error::Malformed(format!("label {label} names both `{n}` and `{}`", &row[3])))
            }
            _ => names[label] = Some(row[3].to_string()),
        }
        if !seen.insert(row[0].to_string()) {
            return Err(Error::Malformed(format!("duplicate path `{}`", &row[0])));
        }
        let record = Record {
            path: row[0].to_string(),
            label,
        };
        match row[1].parse::<Split>()? {
            Split::Train => train.push(record),
            Split::Val => val.push(record),
            Split::Test => test.push(record),
        }
    }
    let class_names = names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::Malformed(format!("label {i} has no records"))))
        .collect::<Result<Vec<_>>>()?;
    if class_names.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(DatasetIndex {
        root,
        class_names,
        train,
        val,
        test,
        provenance,
    })
}

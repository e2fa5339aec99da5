//! Image manifest, the append-only label store, label resolution and the
//! stratified dev/test split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid value {value} for task {task}")]
    InvalidValue { task: Task, value: i64 },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("corrupt label store {path} line {line}: {reason}")]
    CorruptStore { path: PathBuf, line: usize, reason: String },
    #[error("class {class} has {have} labeled images, split needs {need}")]
    InsufficientClass { class: i64, have: usize, need: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("image {image_id}: {reason}")]
    InvalidImage { image_id: String, reason: String },
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Manifest(e.to_string())
    }
}

/// The three rating tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// 1 = building (facade) image, 0 = street image.
    Qualification,
    /// Facade visual quality, 1 to 4 points.
    Quality,
    /// 1 = continuous street wall, 0 = discontinuous.
    Continuity,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Qualification, Task::Quality, Task::Continuity];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Qualification => "qualification",
            Task::Quality => "quality",
            Task::Continuity => "continuity",
        }
    }

    /// Admissible label values, ascending.
    pub fn classes(&self) -> &'static [i64] {
        match self {
            Task::Qualification | Task::Continuity => &[0, 1],
            Task::Quality => &[1, 2, 3, 4],
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, Task::Quality)
    }

    pub fn validate(&self, value: i64) -> Result<(), DatasetError> {
        if self.classes().contains(&value) {
            Ok(())
        } else {
            Err(DatasetError::InvalidValue { task: *self, value })
        }
    }

    /// Expert-rating class shares of the original labeled sample, in percent,
    /// keyed by class value. Shown next to live statistics; never enforced.
    pub fn reference_shares(&self) -> &'static [(i64, f64)] {
        match self {
            Task::Qualification => &[(0, 26.4), (1, 73.6)],
            Task::Quality => &[(1, 7.8), (2, 31.4), (3, 41.9), (4, 18.8)],
            Task::Continuity => &[(0, 58.5), (1, 41.5)],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qualification" => Ok(Task::Qualification),
            "quality" => Ok(Task::Quality),
            "continuity" => Ok(Task::Continuity),
            other => Err(DatasetError::UnknownTask(other.to_string())),
        }
    }
}

/// One row of `images.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub point_id: String,
    pub segment_id: String,
    pub raster_path: String,
    #[serde(rename = "width")]
    pub width_px: u32,
    #[serde(rename = "height")]
    pub height_px: u32,
}

/// Read an `images.csv` manifest. Relative raster paths are kept as written;
/// use [`resolve_raster`] to anchor them at the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: ImageRecord = row?;
        if rec.width_px == 0 || rec.height_px == 0 {
            return Err(DatasetError::InvalidImage {
                image_id: rec.image_id,
                reason: "zero width or height".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, images: &[ImageRecord]) -> Result<(), DatasetError> {
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut w = csv::Writer::from_path(path)?;
    for rec in sorted {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn resolve_raster(manifest_path: &Path, raster_path: &str) -> PathBuf {
    let p = Path::new(raster_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// One human rating; serialized as one line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_id: String,
    pub task: Task,
    pub value: i64,
    pub rater_id: String,
    /// UTC seconds.
    pub ts: i64,
}

impl LabelRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.task.validate(self.value)
    }
}

/// Append-only JSONL label store with a single internal writer.
///
/// Each record is written as one complete line with a single `write_all`
/// under the writer lock, so concurrent appends never interleave. Readers
/// get a snapshot of everything appended so far.
pub struct LabelStore {
    path: PathBuf,
    writer: Mutex<File>,
    records: RwLock<Vec<LabelRecord>>,
}

impl LabelStore {
    /// Open (creating if needed) the store at `path`, loading existing records.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let path = path.into();
        let records = if path.exists() { read_labels(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LabelStore { path, writer: Mutex::new(file), records: RwLock::new(records) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: LabelRecord) -> Result<(), DatasetError> {
        rec.validate()?;
        let mut line = serde_json::to_string(&rec).expect("label records serialize");
        line.push('\n');
        let mut file = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()?;
        // publish while still holding the writer so snapshot order matches file order
        self.records.write().unwrap_or_else(|e| e.into_inner()).push(rec);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<LabelRecord> {
        self.records.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parse a `labels.jsonl` file. Blank lines are skipped; every record is validated.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| DatasetError::CorruptStore { path: path.to_path_buf(), line: i + 1, reason };
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        rec.validate().map_err(|e| corrupt(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Collapse all ratings of `task` to one value per image.
///
/// Within a rater the latest record wins (by timestamp, then file order).
/// Across raters the majority value wins; a tie between values goes to the
/// value whose latest vote is most recent, comparing `(ts, rater_id)`
/// lexicographically.
pub fn resolve_labels(records: &[LabelRecord], task: Task) -> BTreeMap<String, i64> {
    // (image, rater) -> (ts, value); later records with equal ts replace earlier ones
    let mut latest: HashMap<(&str, &str), (i64, i64)> = HashMap::new();
    for r in records.iter().filter(|r| r.task == task) {
        let key = (r.image_id.as_str(), r.rater_id.as_str());
        match latest.get(&key) {
            Some(&(ts, _)) if ts > r.ts => {}
            _ => {
                latest.insert(key, (r.ts, r.value));
            }
        }
    }

    // value -> (votes, most recent (ts, rater))
    type Tally<'a> = BTreeMap<i64, (usize, (i64, &'a str))>;
    let mut tallies: BTreeMap<&str, Tally> = BTreeMap::new();
    for (&(image, rater), &(ts, value)) in &latest {
        let entry = tallies.entry(image).or_default().entry(value).or_insert((0, (ts, rater)));
        entry.0 += 1;
        if (ts, rater) > entry.1 {
            entry.1 = (ts, rater);
        }
    }

    tallies
        .into_iter()
        .map(|(image, votes)| {
            let (value, _) = votes
                .into_iter()
                .max_by(|a, b| (a.1 .0, a.1 .1).cmp(&(b.1 .0, b.1 .1)))
                .expect("at least one vote");
            (image.to_string(), value)
        })
        .collect()
}

/// Train/dev/test partition of labeled image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: BTreeSet<String>,
    pub dev_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

/// Which subset of a split an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Dev,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Test => "test",
        }
    }
}

impl Split {
    pub fn ids(&self, subset: Subset) -> &BTreeSet<String> {
        match subset {
            Subset::Train => &self.train_ids,
            Subset::Dev => &self.dev_ids,
            Subset::Test => &self.test_ids,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))
    }
}

/// Sample exactly `per_class_dev` and `per_class_test` images of every class
/// for dev and test; the remainder trains.
///
/// Classes are visited in ascending order and ids within a class are sorted
/// before a seeded Fisher–Yates shuffle, so the result depends only on the
/// label map, the counts and the seed.
pub fn stratified_split(
    labels: &BTreeMap<String, i64>,
    per_class_dev: usize,
    per_class_test: usize,
    seed: u64,
) -> Result<Split, DatasetError> {
    let mut by_class: BTreeMap<i64, Vec<&String>> = BTreeMap::new();
    for (id, &class) in labels {
        by_class.entry(class).or_default().push(id);
    }
    let need = per_class_dev + per_class_test;
    if let Some((&class, ids)) = by_class.iter().find(|(_, ids)| ids.len() < need) {
        return Err(DatasetError::InsufficientClass { class, have: ids.len(), need });
    }

    let mut rng = SeededRng::new(seed);
    let mut split = Split { train_ids: BTreeSet::new(), dev_ids: BTreeSet::new(), test_ids: BTreeSet::new(), seed };
    for ids in by_class.values_mut() {
        // BTreeMap iteration already sorted the ids
        rng.shuffle(ids);
        for (i, id) in ids.iter().enumerate() {
            let target = if i < per_class_dev {
                &mut split.dev_ids
            } else if i < need {
                &mut split.test_ids
            } else {
                &mut split.train_ids
            };
            target.insert((*id).clone());
        }
    }
    Ok(split)
}

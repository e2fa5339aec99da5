//! Stage orchestration: task training with dev-set lambda selection,
//! qualification screening, per-segment aggregation and survey validation,
//! plus the flat files exchanged between CLI stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, ImageRecord, Split, Subset, Task};
use crate::features::{FeatureError, FeatureVector};
use crate::geo::GeoError;
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::model::{self, Hyperparams, ModelError, SvmModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("no feature vector for image {0}")]
    MissingFeature(String),
    #[error("model for task {model} used where task {expected} is required")]
    WrongTask { expected: Task, model: Task },
    #[error("features from extractor {found} but model expects {expected}")]
    ExtractorMismatch { expected: String, found: String },
    #[error("training split is empty")]
    EmptyTrainingSet,
    #[error("invalid survey row {row}: {reason}")]
    InvalidSurvey { row: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Csv(e.to_string())
    }
}

pub type Features = BTreeMap<String, FeatureVector>;

fn feature<'a>(features: &'a Features, image_id: &str) -> Result<&'a FeatureVector, PipelineError> {
    features.get(image_id).ok_or_else(|| PipelineError::MissingFeature(image_id.to_string()))
}

fn check_model(model: &SvmModel, task: Task) -> Result<(), PipelineError> {
    if model.task != task {
        return Err(PipelineError::WrongTask { expected: task, model: model.task });
    }
    Ok(())
}

/// One model output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub task: Task,
    pub predicted: i64,
    pub decision_values: Vec<f64>,
}

pub fn predict_image(model: &SvmModel, fv: &FeatureVector) -> Result<Prediction, PipelineError> {
    if fv.extractor_id != model.extractor_id {
        return Err(PipelineError::ExtractorMismatch { expected: model.extractor_id.clone(), found: fv.extractor_id.clone() });
    }
    let decision_values = model.decision_values(&fv.values)?;
    Ok(Prediction {
        image_id: fv.image_id.clone(),
        task: model.task,
        predicted: model.class_for(&decision_values),
        decision_values,
    })
}

/// Predictions for `ids`, in the order given.
pub fn predict_ids<'a>(
    model: &SvmModel,
    features: &Features,
    ids: impl IntoIterator<Item = &'a String>,
) -> Result<Vec<Prediction>, PipelineError> {
    ids.into_iter().map(|id| predict_image(model, feature(features, id)?)).collect()
}

/// Metrics of `model` against resolved `labels` over `ids`; `None` when `ids` is empty.
pub fn evaluate_model(
    model: &SvmModel,
    labels: &BTreeMap<String, i64>,
    features: &Features,
    ids: &BTreeSet<String>,
) -> Result<Option<MetricsReport>, PipelineError> {
    let ids: Vec<&String> = ids.iter().filter(|id| labels.contains_key(*id)).collect();
    if ids.is_empty() {
        return Ok(None);
    }
    let preds = predict_ids(model, features, ids.iter().copied())?;
    let truth: Vec<i64> = ids.iter().map(|id| labels[*id]).collect();
    let predicted: Vec<i64> = preds.iter().map(|p| p.predicted).collect();
    Ok(Some(metrics::evaluate(model.task, &truth, &predicted)?))
}

/// Outcome of [`train_task`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SvmModel,
    pub lambda: f64,
    /// `(lambda, dev metrics)` for every grid value tried.
    pub dev_search: Vec<(f64, MetricsReport)>,
    pub train: MetricsReport,
    pub dev: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
}

impl TrainOutcome {
    pub fn report(&self, subset: Subset) -> Option<&MetricsReport> {
        match subset {
            Subset::Train => Some(&self.train),
            Subset::Dev => self.dev.as_ref(),
            Subset::Test => self.test.as_ref(),
        }
    }
}

/// Dev-set comparison: lower MSE for quality, higher F1 for binary tasks.
fn dev_better(task: Task, candidate: &MetricsReport, best: &MetricsReport) -> bool {
    if task.is_binary() {
        candidate.f1 > best.f1
    } else {
        candidate.mse.unwrap_or(f64::INFINITY) < best.mse.unwrap_or(f64::INFINITY)
    }
}

/// Train a task model on the split's train ids.
///
/// With a non-empty `lambda_grid` and a non-empty dev set, one model per
/// grid value is trained and the best on dev is kept (first wins ties);
/// otherwise `hyper.lambda` is used as given. The test subset is evaluated
/// once, after selection.
pub fn train_task(
    task: Task,
    labels: &BTreeMap<String, i64>,
    features: &Features,
    hyper: &Hyperparams,
    split: &Split,
    lambda_grid: &[f64],
) -> Result<TrainOutcome, PipelineError> {
    let train_ids: Vec<&String> = split.train_ids.iter().filter(|id| labels.contains_key(*id)).collect();
    if train_ids.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    let rows: Vec<&FeatureVector> = train_ids.iter().map(|id| feature(features, id)).collect::<Result<_, _>>()?;
    let extractor_id = rows[0].extractor_id.clone();
    if let Some(other) = rows.iter().find(|r| r.extractor_id != extractor_id) {
        return Err(PipelineError::ExtractorMismatch { expected: extractor_id, found: other.extractor_id.clone() });
    }
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.values.as_slice()).collect();
    let ys: Vec<i64> = train_ids.iter().map(|id| labels[*id]).collect();
    let fit = |lambda: f64| model::train_for_task(task, &extractor_id, &xs, &ys, &Hyperparams { lambda, ..*hyper });

    let mut dev_search = Vec::new();
    let mut chosen: Option<(SvmModel, MetricsReport)> = None;
    let has_dev = split.dev_ids.iter().any(|id| labels.contains_key(id));
    if has_dev {
        for &lambda in lambda_grid {
            let m = fit(lambda)?;
            let report = evaluate_model(&m, labels, features, &split.dev_ids)?.expect("dev set is non-empty");
            dev_search.push((lambda, report.clone()));
            if chosen.as_ref().is_none_or(|(_, best)| dev_better(task, &report, best)) {
                chosen = Some((m, report));
            }
        }
    }
    let (model, dev) = match chosen {
        Some((m, r)) => (m, Some(r)),
        None => {
            let m = fit(hyper.lambda)?;
            let dev = evaluate_model(&m, labels, features, &split.dev_ids)?;
            (m, dev)
        }
    };
    let train = evaluate_model(&model, labels, features, &split.train_ids)?.expect("train set is non-empty");
    let test = evaluate_model(&model, labels, features, &split.test_ids)?;
    Ok(TrainOutcome { lambda: model.hyper.lambda, model, dev_search, train, dev, test })
}

/// Result of the qualification screen.
#[derive(Debug, Clone)]
pub struct Screening {
    pub qualified: Vec<ImageRecord>,
    pub rejected: Vec<ImageRecord>,
    pub predictions: Vec<Prediction>,
}

impl Screening {
    pub fn rejected_share(&self) -> f64 {
        let total = self.qualified.len() + self.rejected.len();
        if total == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / total as f64
        }
    }
}

/// Split images into building images (kept) and street images (rejected).
pub fn screen_qualified(
    images: &[ImageRecord],
    qual_model: &SvmModel,
    features: &Features,
) -> Result<Screening, PipelineError> {
    check_model(qual_model, Task::Qualification)?;
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let predictions = sorted
        .par_iter()
        .map(|img| predict_image(qual_model, feature(features, &img.image_id)?))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Screening { qualified: Vec::new(), rejected: Vec::new(), predictions: Vec::new() };
    for (img, pred) in sorted.into_iter().zip(&predictions) {
        if pred.predicted == 1 {
            out.qualified.push(img.clone());
        } else {
            out.rejected.push(img.clone());
        }
    }
    out.predictions = predictions;
    Ok(out)
}

/// Per-segment aggregate of qualified-image predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: String,
    pub quality_mean: Option<f64>,
    pub continuity_share: Option<f64>,
    pub n_images: usize,
}

/// Score qualified images and average per street segment. Segments without
/// any qualified image produce no score.
pub fn score_segments(
    qualified: &[ImageRecord],
    quality_model: &SvmModel,
    continuity_model: &SvmModel,
    features: &Features,
) -> Result<(Vec<SegmentScore>, Vec<Prediction>), PipelineError> {
    check_model(quality_model, Task::Quality)?;
    check_model(continuity_model, Task::Continuity)?;
    let mut sorted: Vec<&ImageRecord> = qualified.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let pairs = sorted
        .par_iter()
        .map(|img| {
            let fv = feature(features, &img.image_id)?;
            Ok((predict_image(quality_model, fv)?, predict_image(continuity_model, fv)?))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let mut per_segment: BTreeMap<&str, (i64, usize, usize)> = BTreeMap::new();
    for (img, (q, c)) in sorted.iter().zip(&pairs) {
        let entry = per_segment.entry(img.segment_id.as_str()).or_insert((0, 0, 0));
        entry.0 += q.predicted;
        entry.1 += usize::from(c.predicted == 1);
        entry.2 += 1;
    }
    let scores = per_segment
        .into_iter()
        .map(|(segment_id, (quality_sum, continuous, n))| SegmentScore {
            segment_id: segment_id.to_string(),
            quality_mean: Some(quality_sum as f64 / n as f64),
            continuity_share: Some(continuous as f64 / n as f64),
            n_images: n,
        })
        .collect();
    let mut predictions = Vec::with_capacity(pairs.len() * 2);
    for (q, c) in pairs {
        predictions.push(q);
        predictions.push(c);
    }
    Ok((scores, predictions))
}

/// One survey response about a street segment, rated 1–5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub segment_id: String,
    pub rating: i64,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub age_band: Option<String>,
    #[serde(default)]
    pub residence: Option<String>,
    #[serde(default)]
    pub education: Option<String>,
}

pub const GENDERS: &[&str] = &["male", "female"];
pub const AGE_BANDS: &[&str] = &["<18", "18-40", "41-60", "60+"];
pub const RESIDENCES: &[&str] = &["resident", "visitor"];
pub const EDUCATION_LEVELS: &[&str] = &["elementary_or_under", "junior", "high_school", "bachelor", "master_or_above"];

impl SurveyRecord {
    pub fn new(segment_id: impl Into<String>, rating: i64) -> Self {
        SurveyRecord { segment_id: segment_id.into(), rating, gender: None, age_band: None, residence: None, education: None }
    }

    fn validate(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.rating) {
            return Err(format!("rating {} outside 1..=5", self.rating));
        }
        let fields = [
            ("gender", &self.gender, GENDERS),
            ("age_band", &self.age_band, AGE_BANDS),
            ("residence", &self.residence, RESIDENCES),
            ("education", &self.education, EDUCATION_LEVELS),
        ];
        for (name, value, allowed) in fields {
            if let Some(v) = value.as_deref().filter(|v| !v.is_empty()) {
                if !allowed.contains(&v) {
                    return Err(format!("{name} {v:?} not one of {allowed:?}"));
                }
            }
        }
        Ok(())
    }
}

pub fn read_survey(path: &Path) -> Result<Vec<SurveyRecord>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let rec: SurveyRecord = row?;
        rec.validate().map_err(|reason| PipelineError::InvalidSurvey { row: i + 2, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_survey(path: &Path, records: &[SurveyRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Which segment score a validation compares against the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFeature {
    Quality,
    Continuity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub feature: ScoreFeature,
    pub spearman_r: f64,
    pub n_segments: usize,
}

/// Paired (machine score, survey mean) vectors over segments present in
/// both inputs, ordered by segment id.
pub fn survey_pairs(scores: &[SegmentScore], surveys: &[SurveyRecord], feature: ScoreFeature) -> (Vec<f64>, Vec<f64>) {
    let mut sums: BTreeMap<&str, (i64, usize)> = BTreeMap::new();
    for s in surveys {
        let e = sums.entry(s.segment_id.as_str()).or_insert((0, 0));
        e.0 += s.rating;
        e.1 += 1;
    }
    let mut machine: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores {
        let v = match feature {
            ScoreFeature::Quality => s.quality_mean,
            ScoreFeature::Continuity => s.continuity_share,
        };
        if let Some(v) = v {
            machine.insert(s.segment_id.as_str(), v);
        }
    }
    machine
        .into_iter()
        .filter_map(|(id, m)| sums.get(id).map(|&(sum, n)| (m, sum as f64 / n as f64)))
        .unzip()
}

/// Spearman correlation between machine segment scores and mean survey
/// ratings, for quality and continuity. No scale mapping is applied.
pub fn validate_against_survey(
    scores: &[SegmentScore],
    surveys: &[SurveyRecord],
) -> Result<Vec<ValidationReport>, PipelineError> {
    [ScoreFeature::Quality, ScoreFeature::Continuity]
        .into_iter()
        .map(|feature| {
            let (machine, survey) = survey_pairs(scores, surveys, feature);
            let r = metrics::spearman(&machine, &survey)?;
            Ok(ValidationReport { feature, spearman_r: r, n_segments: machine.len() })
        })
        .collect()
}

pub fn validation_csv(reports: &[ValidationReport]) -> String {
    let mut out = String::from("feature,spearman_r,n_segments\n");
    for r in reports {
        let name = match r.feature {
            ScoreFeature::Quality => "quality",
            ScoreFeature::Continuity => "continuity",
        };
        let _ = writeln!(out, "{name},{:.6},{}", r.spearman_r, r.n_segments);
    }
    out
}

pub fn write_scores(path: &Path, scores: &[SegmentScore]) -> Result<(), PipelineError> {
    let mut sorted: Vec<&SegmentScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    let mut w = csv::Writer::from_path(path)?;
    for s in sorted {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<SegmentScore>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let scores: Vec<SegmentScore> = rdr.deserialize().collect::<Result<_, _>>()?;
    Ok(scores)
}

/// `image_id,task,predicted,decision_values…`, one row per prediction,
/// sorted by image id then task; decision values fill trailing columns.
pub fn predictions_csv(predictions: &[Prediction]) -> String {
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| (&a.image_id, a.task).cmp(&(&b.image_id, b.task)));
    let mut out = String::from("image_id,task,predicted,decision_values\n");
    for p in sorted {
        let _ = write!(out, "{},{},{}", p.image_id, p.task, p.predicted);
        for v in &p.decision_values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

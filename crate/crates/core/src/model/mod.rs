//! Linear SVMs trained in the primal by Pegasos-style stochastic
//! subgradient descent, with one-vs-rest reduction for the 4-class quality
//! task and a checksummed binary model container.

mod file;
mod pegasos;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{load_model, save_model, FORMAT_VERSION, MAGIC};
pub use pegasos::{hinge_loss, hinge_subgradient, objective, train_pegasos, PegasosFit};

use crate::dataset::Task;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("row {index}: expected dimension {expected}, found {found}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("row {index}: non-finite feature value")]
    NonFiniteFeature { index: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("need at least two training examples, got {0}")]
    TooFewExamples(usize),
    #[error("label {value} is not a class of task {task}")]
    InvalidLabel { task: Task, value: i64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Per-vector feature transform applied before the linear score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    None,
    /// Scale each vector to unit Euclidean norm.
    L2,
    /// Per-dimension z-score with training-set mean and standard deviation.
    Standardize,
}

impl Normalize {
    fn code(self) -> u8 {
        match self {
            Normalize::None => 0,
            Normalize::L2 => 1,
            Normalize::Standardize => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Normalize::None),
            1 => Some(Normalize::L2),
            2 => Some(Normalize::Standardize),
            _ => None,
        }
    }

    /// Default transform for an extractor: `l2` for BoVW histograms, `standardize` otherwise.
    pub fn default_for(extractor_id: &str) -> Self {
        if extractor_id.starts_with("bovw") {
            Normalize::L2
        } else {
            Normalize::Standardize
        }
    }
}

impl fmt::Display for Normalize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalize::None => "none",
            Normalize::L2 => "l2",
            Normalize::Standardize => "standardize",
        })
    }
}

impl FromStr for Normalize {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalize::None),
            "l2" => Ok(Normalize::L2),
            "standardize" => Ok(Normalize::Standardize),
            other => Err(ModelError::InvalidHyperparams(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub normalize: Normalize,
}

impl Hyperparams {
    pub fn new(normalize: Normalize) -> Self {
        Hyperparams { lambda: DEFAULT_LAMBDA, epochs: DEFAULT_EPOCHS, seed: 0, normalize }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(ModelError::InvalidHyperparams(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidHyperparams("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Zero-variance dimensions store 1 so they pass through centered.
    pub std: Vec<f64>,
}

/// A trained linear classifier.
///
/// Binary tasks keep `classes == [0, 1]` with a single weight vector whose
/// positive side is class 1. One-vs-rest models keep one weight vector per
/// class, classes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub task: Task,
    pub extractor_id: String,
    pub classes: Vec<i64>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub hyper: Hyperparams,
    pub norm_stats: Option<NormStats>,
}

impl SvmModel {
    pub fn is_binary(&self) -> bool {
        self.weights.len() == 1 && self.classes.len() == 2
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err("weights and biases disagree in count".into());
        }
        let per_class = self.weights.len() == self.classes.len() && self.classes.len() >= 2;
        if !(self.is_binary() || per_class) {
            return Err(format!("{} weight vectors for {} classes", self.weights.len(), self.classes.len()));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err("classes must be strictly ascending".into());
        }
        let dim = self.dim();
        if self.weights.iter().any(|w| w.len() != dim) {
            return Err("weight vectors differ in dimension".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.weights.iter().all(|w| finite(w)) || !finite(&self.biases) {
            return Err("non-finite weight or bias".into());
        }
        if let Some(stats) = &self.norm_stats {
            if stats.mean.len() != dim || stats.std.len() != dim {
                return Err("normalization statistics have the wrong dimension".into());
            }
            if !finite(&stats.mean) || !stats.std.iter().all(|s| s.is_finite() && *s > 0.0) {
                return Err("invalid normalization statistics".into());
            }
        }
        if self.hyper.normalize == Normalize::Standardize && self.norm_stats.is_none() {
            return Err("standardize model without statistics".into());
        }
        Ok(())
    }

    /// `x` under the stored normalization.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { index: 0, expected: self.dim(), found: x.len() });
        }
        Ok(apply_normalization(self.hyper.normalize, self.norm_stats.as_ref(), x))
    }

    /// `w_c · x̃ + b_c` for every weight vector (one value for binary models).
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let xt = self.transform(x)?;
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, &xt) + b).collect())
    }

    /// Binary: class 1 iff the decision value is ≥ 0. Multiclass: argmax,
    /// ties to the lowest class.
    pub fn predict(&self, x: &[f64]) -> Result<i64, ModelError> {
        let dv = self.decision_values(x)?;
        Ok(self.class_for(&dv))
    }

    pub fn class_for(&self, decision_values: &[f64]) -> i64 {
        if self.is_binary() {
            return if decision_values[0] >= 0.0 { self.classes[1] } else { self.classes[0] };
        }
        let mut best = 0;
        for (i, &v) in decision_values.iter().enumerate() {
            if v > decision_values[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    /// Distance-to-boundary score used to rank images for labeling: |d| for
    /// binary models, gap between the two largest decision values otherwise.
    pub fn uncertainty_margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        let mut dv = self.decision_values(x)?;
        if dv.len() == 1 {
            return Ok(dv[0].abs());
        }
        dv.sort_by(|a, b| b.total_cmp(a));
        Ok(dv[0] - dv[1])
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_normalization(normalize: Normalize, stats: Option<&NormStats>, x: &[f64]) -> Vec<f64> {
    match (normalize, stats) {
        (Normalize::L2, _) => {
            let norm = dot(x, x).sqrt();
            if norm > 0.0 {
                x.iter().map(|v| v / norm).collect()
            } else {
                x.to_vec()
            }
        }
        (Normalize::Standardize, Some(s)) => {
            x.iter().zip(s.mean.iter().zip(&s.std)).map(|(v, (m, sd))| (v - m) / sd).collect()
        }
        _ => x.to_vec(),
    }
}

fn fit_norm_stats(xs: &[&[f64]], dim: usize) -> NormStats {
    let n = xs.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in xs {
        mean.iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in xs {
        var.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    NormStats { mean, std }
}

fn check_inputs(xs: &[&[f64]], n_labels: usize) -> Result<usize, ModelError> {
    if xs.len() != n_labels {
        return Err(ModelError::LengthMismatch { features: xs.len(), labels: n_labels });
    }
    if xs.len() < 2 {
        return Err(ModelError::TooFewExamples(xs.len()));
    }
    let dim = xs[0].len();
    for (index, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(ModelError::DimensionMismatch { index, expected: dim, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature { index });
        }
    }
    Ok(dim)
}

/// Normalized copies of the training rows plus the statistics to store.
fn prepare(xs: &[&[f64]], dim: usize, normalize: Normalize) -> (Vec<Vec<f64>>, Option<NormStats>) {
    let stats = (normalize == Normalize::Standardize).then(|| fit_norm_stats(xs, dim));
    let rows = xs.iter().map(|x| apply_normalization(normalize, stats.as_ref(), x)).collect();
    (rows, stats)
}

/// Train a binary classifier for `task` on labels in `{0, 1}`.
pub fn train_binary(
    task: Task,
    extractor_id: &str,
    xs: &[&[f64]],
    ys: &[i64],
    hyper: &Hyperparams,
) -> Result<SvmModel, ModelError> {
    hyper.validate()?;
    let dim = check_inputs(xs, ys.len())?;
    if let Some(&value) = ys.iter().find(|&&y| y != 0 && y != 1) {
        return Err(ModelError::InvalidLabel { task, value });
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(ModelError::SingleClassInput);
    }
    let (rows, norm_stats) = prepare(xs, dim, hyper.normalize);
    let signs: Vec<f64> = ys.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect();
    let fit = train_pegasos(&rows, &signs, hyper.lambda, hyper.epochs, hyper.seed);
    Ok(SvmModel {
        task,
        extractor_id: extractor_id.to_string(),
        classes: vec![0, 1],
        weights: vec![fit.weights],
        biases: vec![fit.bias],
        hyper: *hyper,
        norm_stats,
    })
}

/// Train one class-vs-rest binary model per class present in `ys`, sharing
/// one normalization. Classes are ordered ascending.
pub fn train_ovr(
    task: Task,
    extractor_id: &str,
    xs: &[&[f64]],
    ys: &[i64],
    hyper: &Hyperparams,
) -> Result<SvmModel, ModelError> {
    hyper.validate()?;
    let dim = check_inputs(xs, ys.len())?;
    let mut classes: Vec<i64> = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ModelError::SingleClassInput);
    }
    let (rows, norm_stats) = prepare(xs, dim, hyper.normalize);
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for &c in &classes {
        let signs: Vec<f64> = ys.iter().map(|&y| if y == c { 1.0 } else { -1.0 }).collect();
        let fit = train_pegasos(&rows, &signs, hyper.lambda, hyper.epochs, hyper.seed);
        weights.push(fit.weights);
        biases.push(fit.bias);
    }
    Ok(SvmModel { task, extractor_id: extractor_id.to_string(), classes, weights, biases, hyper: *hyper, norm_stats })
}

/// Binary training for qualification/continuity, one-vs-rest for quality.
pub fn train_for_task(
    task: Task,
    extractor_id: &str,
    xs: &[&[f64]],
    ys: &[i64],
    hyper: &Hyperparams,
) -> Result<SvmModel, ModelError> {
    if task.is_binary() {
        train_binary(task, extractor_id, xs, ys, hyper)
    } else {
        train_ovr(task, extractor_id, xs, ys, hyper)
    }
}

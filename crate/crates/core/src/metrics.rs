//! Evaluation formulas: confusion counts, precision/recall/F1, accuracy,
//! mean squared error and Spearman's rank correlation.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::Task;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {need} points, got {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("input is constant; rank correlation undefined")]
    ConstantInput,
    #[error("input contains a non-finite value")]
    NonFiniteInput,
}

fn check_pair<A, B>(a: &[A], b: &[B]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Binary confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Labeled positives, `tp + fn_`.
    pub p: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Confusion counts treating `positive` as the positive class and every
/// other value as negative.
pub fn confusion_for(y_true: &[i64], y_pred: &[i64], positive: i64) -> Result<ConfusionCounts, MetricsError> {
    check_pair(y_true, y_pred)?;
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == positive, p == positive) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c.p = c.tp + c.fn_;
    Ok(c)
}

pub fn confusion(y_true: &[i64], y_pred: &[i64]) -> Result<ConfusionCounts, MetricsError> {
    confusion_for(y_true, y_pred, 1)
}

/// `(precision, recall, f1)` with `TP/(TP+FP)`, `TP/P` and `2TP/(2TP+FN+FP)`.
/// Each is 0 when its denominator is 0.
pub fn prf1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.p);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fn_ + c.fp);
    (precision, recall, f1)
}

/// Harmonic-mean form of F1, for values reported only as precision and recall.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn accuracy(y_true: &[i64], y_pred: &[i64]) -> Result<f64, MetricsError> {
    check_pair(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// `1/n Σ (y_i − t_i)²`.
pub fn mse(y: &[f64], t: &[f64]) -> Result<f64, MetricsError> {
    check_pair(y, t)?;
    Ok(y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(MetricsError::TooFewPoints { have: a.len(), need: 3 });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteInput);
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(MetricsError::ConstantInput);
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: i64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metrics for one model on one subset.
///
/// For binary tasks precision/recall/F1 refer to class 1. For the quality
/// task they are macro averages of the per-class one-vs-rest values listed
/// in `per_class`, and `mse` is computed on the integer ratings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: Option<f64>,
    pub positive_class: Option<i64>,
    pub per_class: Vec<ClassMetrics>,
}

pub fn evaluate(task: Task, y_true: &[i64], y_pred: &[i64]) -> Result<MetricsReport, MetricsError> {
    check_pair(y_true, y_pred)?;
    let per_class: Vec<ClassMetrics> = task
        .classes()
        .iter()
        .map(|&class| {
            let c = confusion_for(y_true, y_pred, class)?;
            let (precision, recall, f1) = prf1(&c);
            Ok(ClassMetrics { class, precision, recall, f1, support: c.p })
        })
        .collect::<Result<_, MetricsError>>()?;
    let acc = accuracy(y_true, y_pred)?;
    if task.is_binary() {
        let pos = per_class.iter().find(|c| c.class == 1).expect("binary tasks include class 1");
        return Ok(MetricsReport {
            n: y_true.len(),
            accuracy: acc,
            precision: pos.precision,
            recall: pos.recall,
            f1: pos.f1,
            mse: None,
            positive_class: Some(1),
            per_class,
        });
    }
    let k = per_class.len() as f64;
    let yt: Vec<f64> = y_true.iter().map(|&v| v as f64).collect();
    let yp: Vec<f64> = y_pred.iter().map(|&v| v as f64).collect();
    Ok(MetricsReport {
        n: y_true.len(),
        accuracy: acc,
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        mse: Some(mse(&yp, &yt)?),
        positive_class: None,
        per_class,
    })
}

/// Classification table: one row per `(label, report)`, values in percent
/// with two decimals.
pub fn classification_table(rows: &[(String, &MetricsReport)]) -> String {
    let mut out = String::from("model,positive_class,n,accuracy,precision,recall,f1\n");
    for (label, r) in rows {
        let pos = r.positive_class.map_or_else(|| "macro".to_string(), |c| c.to_string());
        let _ = writeln!(
            out,
            "{label},{pos},{},{:.2},{:.2},{:.2},{:.2}",
            r.n,
            100.0 * r.accuracy,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1
        );
    }
    out
}

/// MSE table: one row per model, columns train/dev/test with three decimals.
/// Missing subsets (e.g. an empty dev set) are left blank.
pub fn mse_table(rows: &[(String, [Option<f64>; 3])]) -> String {
    let mut out = String::from("model,train,dev,test\n");
    for (label, cols) in rows {
        let cells: Vec<String> = cols.iter().map(|c| c.map_or_else(String::new, |v| format!("{v:.3}"))).collect();
        let _ = writeln!(out, "{label},{}", cells.join(","));
    }
    out
}

/// Per-class rows for one report.
pub fn per_class_table(label: &str, r: &MetricsReport) -> String {
    let mut out = String::from("model,class,support,precision,recall,f1\n");
    for c in &r.per_class {
        let _ = writeln!(
            out,
            "{label},{},{},{:.2},{:.2},{:.2}",
            c.class,
            c.support,
            100.0 * c.precision,
            100.0 * c.recall,
            100.0 * c.f1
        );
    }
    out
}

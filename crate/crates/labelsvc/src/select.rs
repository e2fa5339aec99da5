//! Item selection for a rater's labeling session.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use streetscape::dataset::Task;
use streetscape::features::FeatureVector;
use streetscape::model::SvmModel;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Lowest image id not yet labeled by the rater.
    #[default]
    Sequential,
    /// Unlabeled image closest to the current model's decision boundary.
    Uncertain,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Strategy::Sequential),
            "uncertain" => Ok(Strategy::Uncertain),
            other => Err(format!("unknown strategy {other:?} (expected sequential or uncertain)")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Sequential => "sequential",
            Strategy::Uncertain => "uncertain",
        })
    }
}

/// Images this rater has labeled for the task, out of the corpus size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub labeled: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NextItem {
    pub image_id: String,
    pub task: Task,
    pub progress: Progress,
    /// Strategy actually applied.
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("every image has been labeled for task {task} by this rater")]
    CorpusExhausted { task: Task, progress: Progress },
}

/// Pick the next image for a rater.
///
/// `corpus` lists every image id in ascending order; `labeled` holds the ids
/// this rater already rated for `task`; `skipped` are ids passed over in the
/// current session. Skipped images are not offered again until nothing else
/// is left, at which point the skip list is cleared.
pub fn next_item(
    task: Task,
    corpus: &[&str],
    labeled: &BTreeSet<String>,
    skipped: &mut BTreeSet<String>,
    strategy: Strategy,
    model: Option<&SvmModel>,
    features: &BTreeMap<String, FeatureVector>,
) -> Result<NextItem, SelectError> {
    let progress = Progress { labeled: corpus.iter().filter(|id| labeled.contains(**id)).count(), total: corpus.len() };
    let unlabeled: Vec<&str> = corpus.iter().copied().filter(|id| !labeled.contains(*id)).collect();
    if unlabeled.is_empty() {
        return Err(SelectError::CorpusExhausted { task, progress });
    }
    let mut candidates: Vec<&str> = unlabeled.iter().copied().filter(|id| !skipped.contains(*id)).collect();
    if candidates.is_empty() {
        skipped.clear();
        candidates = unlabeled;
    }

    let (chosen, strategy, warning) = match (strategy, model) {
        (Strategy::Sequential, _) => (candidates[0], Strategy::Sequential, None),
        (Strategy::Uncertain, Some(model)) if !features.is_empty() => {
            (most_uncertain(&candidates, model, features), Strategy::Uncertain, None)
        }
        (Strategy::Uncertain, _) => (
            candidates[0],
            Strategy::Sequential,
            Some(format!("NoModelLoaded: no model and features for task {task}; serving sequentially")),
        ),
    };
    Ok(NextItem { image_id: chosen.to_string(), task, progress, strategy, warning })
}

/// Candidate with the smallest uncertainty margin, lowest id on ties.
/// Images without a usable feature vector rank last.
fn most_uncertain<'a>(candidates: &[&'a str], model: &SvmModel, features: &BTreeMap<String, FeatureVector>) -> &'a str {
    let margin = |id: &str| {
        features
            .get(id)
            .and_then(|fv| model.uncertainty_margin(&fv.values).ok())
            .unwrap_or(f64::INFINITY)
    };
    let mut best = (candidates[0], margin(candidates[0]));
    for &id in &candidates[1..] {
        let m = margin(id);
        if m < best.1 {
            best = (id, m);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use streetscape::model::{Hyperparams, Normalize};

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn fv(id: &str, x: f64) -> (String, FeatureVector) {
        (id.to_string(), FeatureVector { image_id: id.into(), extractor_id: "e".into(), values: vec![x] })
    }

    fn identity_model() -> SvmModel {
        SvmModel {
            task: Task::Continuity,
            extractor_id: "e".into(),
            classes: vec![0, 1],
            weights: vec![vec![1.0]],
            biases: vec![0.0],
            hyper: Hyperparams::new(Normalize::None),
            norm_stats: None,
        }
    }

    #[test]
    fn sequential_takes_lowest_unlabeled() {
        let corpus = ["img_a", "img_b"];
        let mut skipped = BTreeSet::new();
        let item = next_item(Task::Quality, &corpus, &ids(&[]), &mut skipped, Strategy::Sequential, None, &BTreeMap::new()).unwrap();
        assert_eq!(item.image_id, "img_a");
        assert_eq!(item.progress, Progress { labeled: 0, total: 2 });
        let item =
            next_item(Task::Quality, &corpus, &ids(&["img_a"]), &mut skipped, Strategy::Sequential, None, &BTreeMap::new()).unwrap();
        assert_eq!(item.image_id, "img_b");
        assert_eq!(item.progress.labeled, 1);
    }

    #[test]
    fn exhaustion() {
        let corpus = ["a", "b"];
        let err = next_item(Task::Quality, &corpus, &ids(&["a", "b"]), &mut BTreeSet::new(), Strategy::Sequential, None, &BTreeMap::new())
            .unwrap_err();
        assert_eq!(err, SelectError::CorpusExhausted { task: Task::Quality, progress: Progress { labeled: 2, total: 2 } });
    }

    #[test]
    fn skipped_items_wait_until_nothing_else_is_left() {
        let corpus = ["a", "b", "c"];
        let mut skipped = ids(&["a"]);
        let labeled = ids(&["b"]);
        let item = next_item(Task::Quality, &corpus, &labeled, &mut skipped, Strategy::Sequential, None, &BTreeMap::new()).unwrap();
        assert_eq!(item.image_id, "c");
        skipped.insert("c".into());
        let item = next_item(Task::Quality, &corpus, &labeled, &mut skipped, Strategy::Sequential, None, &BTreeMap::new()).unwrap();
        assert_eq!(item.image_id, "a");
        assert!(skipped.is_empty());
    }

    #[test]
    fn uncertain_picks_smallest_margin() {
        let features: BTreeMap<_, _> = [fv("a", 0.9), fv("b", -0.1), fv("c", 0.5)].into_iter().collect();
        let model = identity_model();
        let item = next_item(
            Task::Continuity,
            &["a", "b", "c"],
            &ids(&[]),
            &mut BTreeSet::new(),
            Strategy::Uncertain,
            Some(&model),
            &features,
        )
        .unwrap();
        assert_eq!(item.image_id, "b");
        assert_eq!(item.strategy, Strategy::Uncertain);
        assert!(item.warning.is_none());
    }

    #[test]
    fn uncertain_ties_and_missing_features() {
        let features: BTreeMap<_, _> = [fv("b", 0.3), fv("c", -0.3)].into_iter().collect();
        let model = identity_model();
        let item = next_item(
            Task::Continuity,
            &["a", "b", "c"],
            &ids(&[]),
            &mut BTreeSet::new(),
            Strategy::Uncertain,
            Some(&model),
            &features,
        )
        .unwrap();
        assert_eq!(item.image_id, "b");
    }

    #[test]
    fn uncertain_without_model_falls_back() {
        let item =
            next_item(Task::Quality, &["x", "y"], &ids(&[]), &mut BTreeSet::new(), Strategy::Uncertain, None, &BTreeMap::new()).unwrap();
        assert_eq!(item.image_id, "x");
        assert_eq!(item.strategy, Strategy::Sequential);
        assert!(item.warning.unwrap().starts_with("NoModelLoaded"));
    }
}

//! Visual-word codebook: seeded k-means++ followed by Lloyd iterations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::rng::SeededRng;

pub const MAX_ITERATIONS: usize = 50;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub extractor_id: String,
    pub descriptor_dim: usize,
    pub build_seed: u64,
    pub centroids: Vec<Vec<f64>>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn default_extractor_id(k: usize) -> String {
        format!("bovw-k{k}-v1")
    }

    /// Check the structural invariants: k ≥ 2, uniform finite centroids, pairwise distinct.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let invalid = |m: String| Err(FeatureError::InvalidCodebook(m));
        if self.k() < 2 {
            return invalid(format!("k = {} < 2", self.k()));
        }
        for (i, c) in self.centroids.iter().enumerate() {
            if c.len() != self.descriptor_dim {
                return invalid(format!("centroid {i} has dimension {}", c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return invalid(format!("centroid {i} is not finite"));
            }
        }
        for i in 0..self.k() {
            for j in i + 1..self.k() {
                if self.centroids[i] == self.centroids[j] {
                    return invalid(format!("centroids {i} and {j} coincide"));
                }
            }
        }
        Ok(())
    }

    /// Sum of squared distances from each point to its nearest centroid.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| nearest(&self.centroids, p).1).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let text = serde_json::to_string(self).expect("codebook serializes");
        std::fs::write(path, text + "\n").map_err(|e| FeatureError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        let cb: Codebook = serde_json::from_str(&text)
            .map_err(|e| FeatureError::InvalidCodebook(format!("{}: {e}", path.display())))?;
        cb.validate()?;
        Ok(cb)
    }
}

/// k-means over `sample` with k-means++ seeding.
///
/// Deterministic in `(sample order, k, seed)`. Stops after
/// [`MAX_ITERATIONS`] Lloyd steps or once no centroid moves more than
/// [`SHIFT_TOLERANCE`]. A cluster that loses all members keeps its previous
/// centroid.
pub fn build_codebook(sample: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook, FeatureError> {
    if k < 2 {
        return Err(FeatureError::InvalidCodebook(format!("k = {k} < 2")));
    }
    if sample.len() < k {
        return Err(FeatureError::TooFewDescriptors { have: sample.len(), need: k });
    }
    let dim = sample[0].len();
    if let Some(bad) = sample.iter().position(|s| s.len() != dim) {
        return Err(FeatureError::DimensionMismatch { row: bad, expected: dim, found: sample[bad].len() });
    }

    let mut rng = SeededRng::new(seed);
    let mut centroids = seed_plus_plus(sample, k, &mut rng)?;

    let mut assignment = vec![0usize; sample.len()];
    for _ in 0..MAX_ITERATIONS {
        for (a, p) in assignment.iter_mut().zip(sample) {
            *a = nearest(&centroids, p).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(sample) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut max_shift: f64 = 0.0;
        for ((c, sum), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
            max_shift = max_shift.max(squared_distance(c, &mean).sqrt());
            *c = mean;
        }
        if max_shift < SHIFT_TOLERANCE {
            break;
        }
    }

    let cb = Codebook { extractor_id: Codebook::default_extractor_id(k), descriptor_dim: dim, build_seed: seed, centroids };
    cb.validate()?;
    Ok(cb)
}

fn seed_plus_plus(sample: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>, FeatureError> {
    let first = rng.below(sample.len() as u64) as usize;
    let mut centroids = vec![sample[first].clone()];
    let mut d2: Vec<f64> = sample.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(FeatureError::TooFewDescriptors { have: centroids.len(), need: k });
        }
        let target = rng.unit() * total;
        let mut acc = 0.0;
        // fall back to the last positive-weight point if rounding overshoots
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > target {
                pick = i;
                break;
            }
        }
        let c = sample[pick].clone();
        for (slot, p) in d2.iter_mut().zip(sample) {
            *slot = slot.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn sorted(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn k_equals_n_recovers_points() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 5.0], vec![3.0, 3.0]];
        let cb = build_codebook(&pts, 4, 17).unwrap();
        assert_eq!(sorted(cb.centroids.clone()), sorted(pts.clone()));
        assert_eq!(cb.inertia(&pts), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i * i % 13) as f64]).collect();
        let a = build_codebook(&pts, 5, 3).unwrap();
        let b = build_codebook(&pts, 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(build_codebook(&pts, 3, 0), Err(FeatureError::TooFewDescriptors { have: 2, need: 3 })));
        // enough points but not enough distinct ones
        let dup = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(build_codebook(&dup, 2, 0), Err(FeatureError::TooFewDescriptors { .. })));
    }

    /// Plain Lloyd iterations from a given start, written independently of
    /// the implementation under test.
    fn reference_lloyd(points: &[Vec<f64>], mut cents: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        for _ in 0..200 {
            let mut groups: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); cents.len()];
            for p in points {
                let j = (0..cents.len())
                    .min_by(|&a, &b| {
                        let da: f64 = cents[a].iter().zip(p).map(|(c, x)| (c - x).powi(2)).sum();
                        let db: f64 = cents[b].iter().zip(p).map(|(c, x)| (c - x).powi(2)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                groups[j].push(p);
            }
            cents = groups
                .iter()
                .zip(&cents)
                .map(|(g, old)| {
                    if g.is_empty() {
                        return old.clone();
                    }
                    (0..old.len()).map(|d| g.iter().map(|p| p[d]).sum::<f64>() / g.len() as f64).collect()
                })
                .collect();
        }
        cents
    }

    #[test]
    fn separated_blobs_find_blob_means() {
        let mut rng = SeededRng::new(2024);
        let sigma = 0.3;
        let noise = Normal::new(0.0, sigma).unwrap();
        let n = 100;
        let centers = [[-5.0, 1.0], [4.0, -2.0]];
        assert!(centers[0] < centers[1]);
        let mut pts = Vec::new();
        for c in centers {
            for _ in 0..n {
                pts.push(vec![c[0] + noise.sample(rng.inner()), c[1] + noise.sample(rng.inner())]);
            }
        }
        let cb = build_codebook(&pts, 2, 5).unwrap();
        let got = sorted(cb.centroids.clone());
        let want = sorted(reference_lloyd(&pts, vec![pts[0].clone(), pts[n].clone()]));
        for (g, w) in got.iter().zip(&want) {
            for d in 0..2 {
                assert!((g[d] - w[d]).abs() < 1e-9);
            }
        }
        let tol = 3.0 * sigma / (n as f64).sqrt();
        let blob_means: Vec<Vec<f64>> = pts
            .chunks(n)
            .map(|blob| (0..2).map(|d| blob.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect())
            .collect();
        for (g, t) in got.iter().zip(&sorted(blob_means)) {
            assert!((g[0] - t[0]).abs() < tol && (g[1] - t[1]).abs() < tol, "{g:?} vs {t:?}");
        }
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let cents = vec![vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&cents, &[0.0]).0, 0);
    }

    #[test]
    fn validate_rejects_duplicates() {
        let cb = Codebook {
            extractor_id: "x".into(),
            descriptor_dim: 1,
            build_seed: 0,
            centroids: vec![vec![1.0], vec![1.0]],
        };
        assert!(matches!(cb.validate(), Err(FeatureError::InvalidCodebook(_))));
    }
}

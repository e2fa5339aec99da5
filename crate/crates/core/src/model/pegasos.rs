//! Primal subgradient descent for the L2-regularized hinge loss.
//!
//! Objective over `n` examples with labels `y ∈ {−1, +1}`:
//!
//! ```text
//! λ/2 · (‖w‖² + b²) + 1/n · Σ max(0, 1 − y (w·x + b))
//! ```
//!
//! The bias is treated as the weight of a constant 1 feature and is
//! regularized with the rest. Step `t` (counted from 1 across epochs) uses
//! step size `1/(λ (t + t₀))` with `t₀ = 1/λ` on a single example, followed
//! by projection onto the ball of radius `1/√λ`, which contains the optimum.
//! The offset caps the first step at 1; with the plain `1/(λ t)` schedule a
//! small λ turns every late margin violation into a huge kick. Each epoch visits
//! every example once in a freshly shuffled order. The returned weights are
//! the running average of all iterates.

use super::dot;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct PegasosFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective of the averaged iterate at the end of each epoch.
    pub epoch_objectives: Vec<f64>,
}

pub fn hinge_loss(w: &[f64], b: f64, x: &[f64], y: f64) -> f64 {
    (1.0 - y * (dot(w, x) + b)).max(0.0)
}

/// A subgradient of [`hinge_loss`] with respect to `(w, b)`. At the kink
/// (margin exactly 1) the zero subgradient is returned.
pub fn hinge_subgradient(w: &[f64], b: f64, x: &[f64], y: f64) -> (Vec<f64>, f64) {
    if y * (dot(w, x) + b) < 1.0 {
        (x.iter().map(|v| -y * v).collect(), -y)
    } else {
        (vec![0.0; w.len()], 0.0)
    }
}

pub fn objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * (dot(w, w) + b * b);
    let loss: f64 = xs.iter().zip(ys).map(|(x, &y)| hinge_loss(w, b, x, y)).sum();
    reg + loss / xs.len() as f64
}

pub fn train_pegasos(xs: &[Vec<f64>], ys: &[f64], lambda: f64, epochs: usize, seed: u64) -> PegasosFit {
    let dim = xs.first().map_or(0, Vec::len);
    let radius = 1.0 / lambda.sqrt();
    let t0 = 1.0 / lambda;
    let mut rng = SeededRng::new(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut sum_w = vec![0.0; dim];
    let mut sum_b = 0.0;
    let mut t: u64 = 0;
    let mut epoch_objectives = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * (t as f64 + t0));
            let (x, y) = (&xs[i], ys[i]);
            let violated = y * (dot(&w, x) + b) < 1.0;
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if violated {
                w.iter_mut().zip(x).for_each(|(v, xv)| *v += eta * y * xv);
                b += eta * y;
            }
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
                b *= s;
            }
            sum_w.iter_mut().zip(&w).for_each(|(s, v)| *s += v);
            sum_b += b;
        }
        let (avg_w, avg_b) = average(&sum_w, sum_b, t);
        epoch_objectives.push(objective(&avg_w, avg_b, xs, ys, lambda));
    }

    let (weights, bias) = average(&sum_w, sum_b, t.max(1));
    PegasosFit { weights, bias, epoch_objectives }
}

fn average(sum_w: &[f64], sum_b: f64, t: u64) -> (Vec<f64>, f64) {
    let n = t.max(1) as f64;
    (sum_w.iter().map(|s| s / n).collect(), sum_b / n)
}

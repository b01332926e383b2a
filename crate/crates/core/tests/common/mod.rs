#![allow(dead_code)]

use nppsim::fedlearn::{ModelWeights, Sample};
use rand::Rng;

/// Shortest distance from `p` to the polyline through `pts`.
pub fn dist_to_polyline(p: (f64, f64), pts: &[(f64, f64)]) -> f64 {
    if pts.len() == 1 {
        return ((p.0 - pts[0].0).powi(2) + (p.1 - pts[0].1).powi(2)).sqrt();
    }
    pts.windows(2)
        .map(|seg| {
            let (a, b) = (seg[0], seg[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
            };
            let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
            ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest distance from any point of a `step`-spaced grid over the
/// rectangle to the path.
pub fn worst_grid_gap(width: f64, length: f64, step: f64, path: &[(f64, f64)]) -> f64 {
    let nx = (width / step).floor() as usize;
    let ny = (length / step).floor() as usize;
    let mut worst: f64 = 0.0;
    for i in 0..=nx + 1 {
        let x = (i as f64 * step).min(width);
        for j in 0..=ny + 1 {
            let y = (j as f64 * step).min(length);
            worst = worst.max(dist_to_polyline((x, y), path));
        }
    }
    worst
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut concordant = 0.0;
    let mut pairs = 0usize;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    (pairs > 0).then(|| concordant / pairs as f64)
}

pub fn random_weights<R: Rng>(classes: usize, features: usize, scale: f64, rng: &mut R) -> ModelWeights {
    let values = (0..classes * features + classes)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    ModelWeights::from_values(classes, features, values).unwrap()
}

pub fn random_rows<R: Rng>(n: usize, classes: usize, features: usize, rng: &mut R) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            features: (0..features).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: rng.random_range(0..classes),
        })
        .collect()
}

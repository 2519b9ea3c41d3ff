//! Lloyd's k-means with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distance::squared_euclidean;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of every sample.
    pub assignments: Vec<usize>,
    /// `k x D`, row-major.
    pub centroids: Vec<f64>,
    /// Sum of squared distances to the final centroids.
    pub inertia: f64,
    /// Inertia measured after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans_baseline(set: &EmbeddingSet, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let (n, dim) = (set.len(), set.dim());
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k={k} must be in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(set, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let step: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(set.row(i), &centroids, dim))
            .collect();
        inertia_history.push(step.iter().map(|s| s.1).sum());
        let changed = step.iter().zip(&assignments).any(|(s, &a)| s.0 != a);
        assignments = step.into_iter().map(|s| s.0).collect();
        if !changed {
            converged = true;
            break;
        }
        update_centroids(set, &assignments, &mut centroids, k);
    }

    let inertia = (0..n)
        .map(|i| {
            let c = assignments[i];
            squared_euclidean(set.row(i), &centroids[c * dim..(c + 1) * dim])
        })
        .sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        inertia_history,
        iterations,
        converged,
    })
}

fn plus_plus(set: &EmbeddingSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = set.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(set.row(i), set.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            pick
        } else {
            // every point coincides with a chosen one
            let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            rest[rng.random_range(0..rest.len())]
        };
        chosen.push(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(squared_euclidean(set.row(i), set.row(next)));
        }
    }
    chosen.iter().flat_map(|&i| set.row(i).iter().copied()).collect()
}

fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_euclidean(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Means of the assigned samples; an empty cluster keeps its centroid.
fn update_centroids(set: &EmbeddingSet, assignments: &[usize], centroids: &mut [f64], k: usize) {
    let dim = set.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        counts[c] += 1;
        for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(set.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for d in 0..dim {
                centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
            }
        }
    }
}

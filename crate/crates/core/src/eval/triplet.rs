//! Batch-hard soft-margin triplet loss, as a diagnostic on embeddings.
//!
//! For anchor `a` with hardest positive `p` and hardest negative `n`
//! (squared Euclidean distances) the term is
//! `ln(1 + exp(|a - p|^2 - |a - n|^2 + margin))`; the loss is the mean term.

use std::collections::BTreeMap;

use crate::distance::squared_euclidean;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    pub hardest_positive: Vec<usize>,
    pub hardest_negative: Vec<usize>,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn labels_of(features: &EmbeddingSet) -> Result<Vec<usize>> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = Vec::with_capacity(features.len());
    for m in features.meta() {
        let v = m.vehicle_id.as_deref().ok_or_else(|| {
            Error::BatchComposition(format!("sample `{}` has no vehicle_id", m.id))
        })?;
        let next = ids.len();
        let l = *ids.entry(v).or_insert(next);
        *counts.entry(l).or_default() += 1;
        labels.push(l);
    }
    if ids.len() < 2 {
        return Err(Error::BatchComposition(format!(
            "batch needs at least two identities, found {}",
            ids.len()
        )));
    }
    if let Some((name, _)) = ids.iter().find(|(_, l)| counts[l] < 2) {
        return Err(Error::BatchComposition(format!(
            "identity `{name}` has a single sample"
        )));
    }
    Ok(labels)
}

/// Loss value with per-anchor terms and the mined triplets.
pub fn triplet_loss_batch_hard(features: &EmbeddingSet, margin: f64) -> Result<TripletLoss> {
    let labels = labels_of(features)?;
    let n = features.len();
    let mut per_anchor = Vec::with_capacity(n);
    let mut hardest_positive = Vec::with_capacity(n);
    let mut hardest_negative = Vec::with_capacity(n);
    for a in 0..n {
        let fa = features.row(a);
        let mut pos = (usize::MAX, f64::NEG_INFINITY);
        let mut neg = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = squared_euclidean(fa, features.row(j));
            if labels[j] == labels[a] {
                if d > pos.1 {
                    pos = (j, d);
                }
            } else if d < neg.1 {
                neg = (j, d);
            }
        }
        per_anchor.push(softplus(pos.1 - neg.1 + margin));
        hardest_positive.push(pos.0);
        hardest_negative.push(neg.0);
    }
    let loss = per_anchor.iter().sum::<f64>() / n as f64;
    Ok(TripletLoss {
        loss,
        per_anchor,
        hardest_positive,
        hardest_negative,
    })
}

/// Loss plus its gradient with respect to every feature value, row-major.
/// The hard-example selection is held fixed, as in backpropagation.
pub fn triplet_loss_with_grad(features: &EmbeddingSet, margin: f64) -> Result<(TripletLoss, Vec<f64>)> {
    let out = triplet_loss_batch_hard(features, margin)?;
    let (n, dim) = (features.len(), features.dim());
    let mut grad = vec![0.0; n * dim];
    for a in 0..n {
        let (p, q) = (out.hardest_positive[a], out.hardest_negative[a]);
        let (fa, fp, fq) = (features.row(a), features.row(p), features.row(q));
        let z = squared_euclidean(fa, fp) - squared_euclidean(fa, fq) + margin;
        let s = sigmoid(z) / n as f64;
        for k in 0..dim {
            // dz/dfa = 2(fq - fp), dz/dfp = -2(fa - fp), dz/dfq = 2(fa - fq)
            grad[a * dim + k] += s * 2.0 * (fq[k] - fp[k]);
            grad[p * dim + k] -= s * 2.0 * (fa[k] - fp[k]);
            grad[q * dim + k] += s * 2.0 * (fa[k] - fq[k]);
        }
    }
    Ok((out, grad))
}

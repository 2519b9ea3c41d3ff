use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::mining::PseudoLabelSet;

/// Fraction of `(predicted, truth)` pairs that agree under the best
/// one-to-one mapping between predicted and true labels.
pub fn matching_accuracy<P: Ord + Clone, T: Ord + Clone>(pairs: &[(P, T)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let pred: BTreeMap<P, usize> = index_of(pairs.iter().map(|p| p.0.clone()));
    let truth: BTreeMap<T, usize> = index_of(pairs.iter().map(|p| p.1.clone()));
    let n = pred.len().max(truth.len());
    let mut table = Matrix::new(n, n, 0i64);
    for (p, t) in pairs {
        table[(pred[p], truth[t])] += 1;
    }
    let (matched, _) = kuhn_munkres(&table);
    matched as f64 / pairs.len() as f64
}

fn index_of<K: Ord>(keys: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in keys {
        let next = m.len();
        m.entry(k).or_insert(next);
    }
    m
}

/// Accuracy of the labeled subset of `labels` against `truth.vehicle_id`.
///
/// Sample indices in `labels` address rows of `truth`.
pub fn pseudo_label_accuracy(labels: &PseudoLabelSet, truth: &EmbeddingSet) -> Result<f64> {
    let mut pairs = Vec::with_capacity(labels.assignments().len());
    for (&sample, &pid) in labels.assignments() {
        let meta = truth.meta().get(sample).ok_or_else(|| {
            Error::Input(format!("labeled sample {sample} outside truth set of {}", truth.len()))
        })?;
        let vid = meta.vehicle_id.as_deref().ok_or_else(|| {
            Error::Input(format!("labeled sample `{}` has no vehicle_id", meta.id))
        })?;
        pairs.push((pid, vid.to_owned()));
    }
    Ok(matching_accuracy(&pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabeling_scores_one() {
        let pairs: Vec<(u32, &str)> = vec![(7, "a"), (7, "a"), (3, "b"), (9, "c"), (3, "b")];
        assert_eq!(matching_accuracy(&pairs), 1.0);
    }

    #[test]
    fn one_mislabel_in_ten() {
        let mut pairs: Vec<(u32, u32)> = (0..10).map(|i| (i % 2, i % 2)).collect();
        pairs[3] = (0, 1);
        assert!((matching_accuracy(&pairs) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn more_predicted_than_true_labels() {
        // pseudo IDs 0 and 1 both map onto true "a"; only one can match
        let pairs = vec![(0u32, "a"), (0, "a"), (1, "a"), (2, "b")];
        assert!((matching_accuracy(&pairs) - 0.75).abs() < 1e-12);
    }
}

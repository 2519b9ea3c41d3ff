//! Retrieval metrics and label-quality diagnostics.

mod matching;
mod triplet;

use std::collections::{BTreeMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::distance::{top_k_row, DistanceMatrix};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub use matching::{matching_accuracy, pseudo_label_accuracy};
pub use triplet::{triplet_loss_batch_hard, triplet_loss_with_grad, TripletLoss};

/// Leaderboard list length.
pub const DEFAULT_TOP_K: usize = 100;
/// Ranks reported by default in a CMC curve.
pub const DEFAULT_CMC_RANKS: [usize; 5] = [1, 5, 10, 15, 20];

/// Per-query ordered gallery indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedResult {
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
    lists: Vec<Vec<usize>>,
}

impl RankedResult {
    pub fn new(query_ids: Vec<String>, gallery_ids: Vec<String>, lists: Vec<Vec<usize>>) -> Result<Self> {
        if lists.len() != query_ids.len() {
            return Err(Error::Shape(format!(
                "{} ranked lists for {} queries",
                lists.len(),
                query_ids.len()
            )));
        }
        for (q, list) in lists.iter().enumerate() {
            let mut seen = HashSet::with_capacity(list.len());
            for &g in list {
                if g >= gallery_ids.len() {
                    return Err(Error::Integrity(format!(
                        "query {q} lists gallery index {g} but the gallery has {} items",
                        gallery_ids.len()
                    )));
                }
                if !seen.insert(g) {
                    return Err(Error::Integrity(format!(
                        "query {q} lists gallery index {g} twice"
                    )));
                }
            }
        }
        Ok(RankedResult {
            query_ids,
            gallery_ids,
            lists,
        })
    }

    /// Top-`k` of every row of a query x gallery distance matrix.
    pub fn from_distances(dist: &DistanceMatrix, k: usize) -> Result<Self> {
        let lists = (0..dist.rows()).map(|i| top_k_row(dist.row(i), k)).collect();
        Self::new(dist.row_ids().to_vec(), dist.col_ids().to_vec(), lists)
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.lists.iter_mut().for_each(|l| l.truncate(k));
    }
}

/// Which gallery items count as correct matches for each query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relevance {
    gallery_len: usize,
    relevant: Vec<HashSet<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceOptions {
    /// Drop gallery items captured by the query's own camera.
    pub exclude_same_camera: bool,
}

impl Relevance {
    pub fn new(gallery_len: usize, relevant: Vec<HashSet<usize>>) -> Result<Self> {
        for set in &relevant {
            if let Some(g) = set.iter().find(|&&g| g >= gallery_len) {
                return Err(Error::Integrity(format!(
                    "relevant index {g} outside gallery of {gallery_len}"
                )));
            }
        }
        Ok(Relevance {
            gallery_len,
            relevant,
        })
    }

    /// Relevance from `vehicle_id` labels. Queries without a label get an
    /// empty set and are skipped by the metrics.
    pub fn from_labels(query: &EmbeddingSet, gallery: &EmbeddingSet, opts: RelevanceOptions) -> Result<Self> {
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (j, m) in gallery.meta().iter().enumerate() {
            if let Some(v) = m.vehicle_id.as_deref() {
                by_label.entry(v).or_default().push(j);
            }
        }
        let relevant = query
            .meta()
            .iter()
            .map(|qm| {
                let Some(v) = qm.vehicle_id.as_deref() else {
                    return HashSet::new();
                };
                by_label
                    .get(v)
                    .into_iter()
                    .flatten()
                    .copied()
                    .filter(|&j| {
                        !(opts.exclude_same_camera
                            && qm.camera_id.is_some()
                            && gallery.meta()[j].camera_id == qm.camera_id)
                    })
                    .collect()
            })
            .collect();
        Self::new(gallery.len(), relevant)
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn relevant(&self, query: usize) -> &HashSet<usize> {
        &self.relevant[query]
    }

    fn check(&self, result: &RankedResult) -> Result<()> {
        if result.len() != self.relevant.len() {
            return Err(Error::Shape(format!(
                "{} ranked queries but ground truth covers {}",
                result.len(),
                self.relevant.len()
            )));
        }
        for list in &result.lists {
            if let Some(g) = list.iter().find(|&&g| g >= self.gallery_len) {
                return Err(Error::Integrity(format!(
                    "gallery index {g} has no ground truth (gallery of {})",
                    self.gallery_len
                )));
            }
        }
        Ok(())
    }
}

/// Average precision of one list over its first `k` entries, normalized by
/// `min(#relevant, k)`. `None` when nothing is relevant.
pub fn average_precision(list: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, g) in list.iter().take(k).enumerate() {
        if relevant.contains(g) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant.len().min(k) as f64)
}

fn per_query_ap(result: &RankedResult, truth: &Relevance, k: usize) -> Vec<Option<f64>> {
    result
        .lists
        .iter()
        .enumerate()
        .map(|(q, list)| average_precision(list, truth.relevant(q), k))
        .collect()
}

fn mean_of_valid(aps: &[Option<f64>]) -> Result<f64> {
    let valid: Vec<f64> = aps.iter().flatten().copied().collect();
    let skipped = aps.len() - valid.len();
    if skipped > 0 {
        warn!("{skipped} queries have no relevant gallery item and are skipped");
    }
    if valid.is_empty() {
        return Err(Error::Input("no query has a relevant gallery item".into()));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}

/// Mean average precision over the top-`k` of every list.
pub fn map_at_k(result: &RankedResult, truth: &Relevance, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }
    truth.check(result)?;
    mean_of_valid(&per_query_ap(result, truth, k))
}

/// Fraction of evaluable queries whose first relevant hit is within each rank.
pub fn cmc(result: &RankedResult, truth: &Relevance, ranks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    truth.check(result)?;
    let firsts: Vec<Option<usize>> = result
        .lists
        .iter()
        .enumerate()
        .filter(|(q, _)| !truth.relevant(*q).is_empty())
        .map(|(q, list)| list.iter().position(|g| truth.relevant(q).contains(g)))
        .collect();
    if firsts.is_empty() {
        return Err(Error::Input("no query has a relevant gallery item".into()));
    }
    let n = firsts.len() as f64;
    Ok(ranks
        .iter()
        .map(|&r| {
            let hit = firsts.iter().filter(|f| matches!(f, Some(p) if p + 1 <= r)).count();
            (r, hit as f64 / n)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub map_at_k: f64,
    pub cmc: BTreeMap<usize, f64>,
    pub num_queries: usize,
    pub num_evaluated: usize,
    pub per_query_ap: Vec<Option<f64>>,
}

/// mAP@k and CMC in one pass.
pub fn evaluate(result: &RankedResult, truth: &Relevance, k: usize, ranks: &[usize]) -> Result<EvalReport> {
    truth.check(result)?;
    let per_query_ap = per_query_ap(result, truth, k);
    Ok(EvalReport {
        k,
        map_at_k: mean_of_valid(&per_query_ap)?,
        cmc: cmc(result, truth, ranks)?,
        num_queries: result.len(),
        num_evaluated: per_query_ap.iter().flatten().count(),
        per_query_ap,
    })
}

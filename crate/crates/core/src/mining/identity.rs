//! Identity mining.
//!
//! Stage 1 greedily grows a set of mutually distant query "centers": starting
//! from a random query, it repeatedly adds the candidate whose summed distance
//! to the current centers is largest, among queries farther than `d_n` from
//! every center, until no such query is left. Stage 2 labels every sample
//! closer than `d_p` to some center with its nearest center.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{distance_matrix, DistanceMatrix, Metric};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    /// Negative-pair threshold: centers are farther apart than this.
    pub d_n: f64,
    /// Positive-pair threshold: samples closer than this to a center are labeled.
    pub d_p: f64,
    pub seed: u64,
    /// Number of stage-1 starts; the run with the most centers wins.
    pub restarts: usize,
    /// Let stage 2 keep growing from newly labeled samples.
    pub iterate: bool,
    pub metric: Metric,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            d_n: 0.49,
            d_p: 0.23,
            seed: 0,
            restarts: 1,
            iterate: false,
            metric: Metric::Euclidean,
        }
    }
}

impl MiningParams {
    pub fn new(d_n: f64, d_p: f64, seed: u64) -> Result<Self> {
        let p = MiningParams {
            d_n,
            d_p,
            seed,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_n > 0.0 && self.d_p > 0.0) {
            return Err(Error::Parameter("d_n and d_p must be positive".into()));
        }
        if self.d_p >= self.d_n {
            return Err(Error::Parameter(format!(
                "d_p={} must be smaller than d_n={}",
                self.d_p, self.d_n
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Parameter("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mined labels over a pool of samples (queries first, then gallery).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    centers: Vec<usize>,
    assignments: BTreeMap<usize, usize>,
    params: MiningParams,
}

impl PseudoLabelSet {
    /// Checks that centers are distinct and each center carries its own
    /// ordinal, and that every pseudo id names a center.
    pub fn new(centers: Vec<usize>, assignments: BTreeMap<usize, usize>, params: MiningParams) -> Result<Self> {
        for (t, &c) in centers.iter().enumerate() {
            if centers[..t].contains(&c) {
                return Err(Error::Integrity(format!("sample {c} is listed as a center twice")));
            }
            if assignments.get(&c) != Some(&t) {
                return Err(Error::Integrity(format!("center {c} is not assigned its own pseudo id {t}")));
            }
        }
        if let Some((s, p)) = assignments.iter().find(|(_, &p)| p >= centers.len()) {
            return Err(Error::Integrity(format!(
                "sample {s} has pseudo id {p} but there are {} centers",
                centers.len()
            )));
        }
        Ok(PseudoLabelSet {
            centers,
            assignments,
            params,
        })
    }

    /// Query indices of the stage-1 centers; position is the pseudo ID.
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Sample index -> pseudo ID, for labeled samples only.
    pub fn assignments(&self) -> &BTreeMap<usize, usize> {
        &self.assignments
    }

    pub fn params(&self) -> &MiningParams {
        &self.params
    }

    pub fn label_of(&self, sample: usize) -> Option<usize> {
        self.assignments.get(&sample).copied()
    }

    /// One `{"id", "pseudo_id", "is_center"}` object per labeled sample, in
    /// sample order. `ids` names every sample of the pool.
    pub fn to_jsonl(&self, ids: &[String]) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            pseudo_id: usize,
            is_center: bool,
        }
        let mut out = String::new();
        for (&sample, &pid) in &self.assignments {
            let id = ids.get(sample).ok_or_else(|| {
                Error::Input(format!("sample {sample} has no id ({} ids)", ids.len()))
            })?;
            let line = Line {
                id,
                pseudo_id: pid,
                is_center: self.centers.get(pid) == Some(&sample),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = self.to_jsonl(ids)?;
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Stage 1: ordered centers chosen from the queries.
pub fn im_stage1(dist_qq: &DistanceMatrix, params: &MiningParams) -> Result<Vec<usize>> {
    params.validate()?;
    let n = dist_qq.rows();
    if n == 0 {
        return Err(Error::Input("query set is empty".into()));
    }
    if !dist_qq.is_square() {
        return Err(Error::Shape("query-query matrix must be square".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let first = rng.random_range(0..n);
    Ok(grow_centers(dist_qq, first, params.d_n))
}

fn grow_centers(dist_qq: &DistanceMatrix, first: usize, d_n: f64) -> Vec<usize> {
    let n = dist_qq.rows();
    let mut centers = vec![first];
    let mut sum: Vec<f64> = dist_qq.row(first).to_vec();
    let mut min: Vec<f64> = sum.clone();
    loop {
        // argmax of summed distance among candidates; ties -> lowest index
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if min[i] > d_n && best.is_none_or(|(_, s)| sum[i] > s) {
                best = Some((i, sum[i]));
            }
        }
        let Some((next, _)) = best else { break };
        centers.push(next);
        let row = dist_qq.row(next);
        for i in 0..n {
            sum[i] += row[i];
            min[i] = min[i].min(row[i]);
        }
    }
    centers
}

/// Stage 2: label each pool sample (row) from its distances to the centers
/// (columns). Center `t` sits at pool index `centers[t]` and always gets
/// pseudo ID `t`.
pub fn im_stage2(
    dist_all_to_centers: &DistanceMatrix,
    centers: &[usize],
    params: &MiningParams,
) -> Result<PseudoLabelSet> {
    params.validate()?;
    if centers.is_empty() {
        return Err(Error::Input("center list is empty".into()));
    }
    if dist_all_to_centers.cols() != centers.len() {
        return Err(Error::Shape(format!(
            "{} distance columns for {} centers",
            dist_all_to_centers.cols(),
            centers.len()
        )));
    }
    if let Some(&c) = centers.iter().find(|&&c| c >= dist_all_to_centers.rows()) {
        return Err(Error::Shape(format!("center {c} is not a pool row")));
    }
    let labels: Vec<Option<usize>> = (0..dist_all_to_centers.rows())
        .into_par_iter()
        .map(|x| nearest_within(dist_all_to_centers.row(x), params.d_p))
        .collect();
    let mut assignments: BTreeMap<usize, usize> = labels
        .into_iter()
        .enumerate()
        .filter_map(|(x, l)| l.map(|l| (x, l)))
        .collect();
    for (t, &c) in centers.iter().enumerate() {
        assignments.insert(c, t);
    }
    Ok(PseudoLabelSet {
        centers: centers.to_vec(),
        assignments,
        params: *params,
    })
}

/// Index of the smallest entry below `threshold`, lowest index on ties.
fn nearest_within(row: &[f64], threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (t, &d) in row.iter().enumerate() {
        if d < threshold && best.is_none_or(|(_, b)| d < b) {
            best = Some((t, d));
        }
    }
    best.map(|(t, _)| t)
}

/// Both stages over `query` and `gallery`. Pool indices run over the queries
/// first, then the gallery.
pub fn identity_mine(query: &EmbeddingSet, gallery: &EmbeddingSet, params: &MiningParams) -> Result<PseudoLabelSet> {
    params.validate()?;
    let pool = query.concat(gallery)?;
    let dist_qq = distance_matrix(query, query, params.metric)?;

    let mut best: Option<PseudoLabelSet> = None;
    for r in 0..params.restarts {
        let run_params = MiningParams {
            seed: params.seed.wrapping_add(r as u64),
            ..*params
        };
        let centers = im_stage1(&dist_qq, &run_params)?;
        let labels = label_pool(&pool, query, &centers, &run_params)?;
        let better = match &best {
            None => true,
            Some(b) => {
                (labels.centers.len(), labels.assignments.len())
                    > (b.centers.len(), b.assignments.len())
            }
        };
        if better {
            best = Some(labels);
        }
    }
    let mut best = best.expect("restarts >= 1");
    // report the caller's seed; the winning run is recoverable from it
    best.params.seed = params.seed;
    Ok(best)
}

fn label_pool(
    pool: &EmbeddingSet,
    query: &EmbeddingSet,
    centers: &[usize],
    params: &MiningParams,
) -> Result<PseudoLabelSet> {
    let center_set = query.select(centers)?;
    let dist = distance_matrix(pool, &center_set, params.metric)?;
    let mut labels = im_stage2(&dist, centers, params)?;
    if params.iterate {
        grow_labels(pool, &mut labels, params)?;
    }
    Ok(labels)
}

/// Repeatedly labels unlabeled samples within `d_p` of a sample labeled in
/// the previous round, taking the label of the nearest such sample.
fn grow_labels(pool: &EmbeddingSet, labels: &mut PseudoLabelSet, params: &MiningParams) -> Result<()> {
    let centers: std::collections::HashSet<usize> = labels.centers.iter().copied().collect();
    let mut frontier: Vec<usize> = labels
        .assignments
        .keys()
        .copied()
        .filter(|s| !centers.contains(s))
        .collect();
    while !frontier.is_empty() {
        let unlabeled: Vec<usize> = (0..pool.len())
            .filter(|s| !labels.assignments.contains_key(s))
            .collect();
        if unlabeled.is_empty() {
            break;
        }
        let dist = distance_matrix(&pool.select(&unlabeled)?, &pool.select(&frontier)?, params.metric)?;
        let mut added = Vec::new();
        for (r, &x) in unlabeled.iter().enumerate() {
            if let Some(f) = nearest_within(dist.row(r), params.d_p) {
                added.push((x, labels.assignments[&frontier[f]]));
            }
        }
        frontier = added.iter().map(|&(x, _)| x).collect();
        labels.assignments.extend(added);
    }
    Ok(())
}

/// Checks the stage-1 and stage-2 contracts of `labels` against the raw
/// distances: centers pairwise farther than `d_n`, no query left farther than
/// `d_n` from every center, and every assignment made from a center is to the
/// nearest center and closer than `d_p`. Returns a description of the first violation.
pub fn validate_labels(
    labels: &PseudoLabelSet,
    dist_qq: &DistanceMatrix,
    dist_all_to_centers: &DistanceMatrix,
) -> std::result::Result<(), String> {
    let p = labels.params();
    let c = labels.centers();
    for (a, &ca) in c.iter().enumerate() {
        for &cb in &c[a + 1..] {
            if dist_qq.get(ca, cb) <= p.d_n {
                return Err(format!("centers {ca} and {cb} are within d_n"));
            }
        }
    }
    for q in 0..dist_qq.rows() {
        let m = c.iter().map(|&ci| dist_qq.get(q, ci)).fold(f64::INFINITY, f64::min);
        if m > p.d_n {
            return Err(format!("query {q} is farther than d_n from every center"));
        }
    }
    for (&x, &t) in labels.assignments() {
        if c.get(t) == Some(&x) {
            continue;
        }
        let row = dist_all_to_centers.row(x);
        if p.iterate && nearest_within(row, p.d_p).is_none() {
            // labeled by growth from another labeled sample
            continue;
        }
        if row[t] >= p.d_p {
            return Err(format!("sample {x} assigned to center {t} at distance {} >= d_p", row[t]));
        }
        if nearest_within(row, p.d_p) != Some(t) {
            return Err(format!("sample {x} is not assigned to its nearest center"));
        }
    }
    for x in 0..dist_all_to_centers.rows() {
        if !labels.assignments().contains_key(&x) && nearest_within(dist_all_to_centers.row(x), p.d_p).is_some() {
            return Err(format!("sample {x} is within d_p of a center but unlabeled"));
        }
    }
    Ok(())
}

//! k-reciprocal re-ranking.
//!
//! The probe and gallery sets are treated as one pool of `n = q + g` points.
//! For every point the k-reciprocal neighborhood is computed, expanded with
//! the half-size reciprocal sets of its members, and encoded as a sparse
//! vector of Gaussian-kernel weights. Vectors are smoothed over the `k2`
//! nearest neighbors, and the Jaccard distance between probe and gallery
//! vectors is blended with the original distance by `lambda`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{top_k_row, DistanceMatrix};
use crate::error::{Error, Result};

/// How input distances are conditioned before neighbor ranking and kernel
/// weighting. Ranking is unaffected by either choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceTransform {
    /// Use the input distances as given. `lambda = 1` returns the input.
    #[default]
    Identity,
    /// Square every distance and divide each row by its maximum over the
    /// whole pool, as in the reference implementation of the method.
    SquaredRowMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
    pub transform: DistanceTransform,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            k1: 20,
            k2: 6,
            lambda: 0.3,
            transform: DistanceTransform::Identity,
        }
    }
}

impl RerankParams {
    pub fn new(k1: usize, k2: usize, lambda: f64) -> Result<Self> {
        let p = RerankParams {
            k1,
            k2,
            lambda,
            transform: DistanceTransform::Identity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_transform(mut self, transform: DistanceTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Parameter("k1 and k2 must be positive".into()));
        }
        if self.k2 > self.k1 {
            return Err(Error::Parameter(format!(
                "k2={} must not exceed k1={}",
                self.k2, self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Parameter(format!(
                "lambda={} must lie in [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Read-only view of the `(q + g)` square pool assembled from three blocks.
struct Pool<'a> {
    qg: &'a DistanceMatrix,
    qq: &'a DistanceMatrix,
    gg: &'a DistanceMatrix,
    q: usize,
}

impl Pool<'_> {
    fn len(&self) -> usize {
        self.q + self.gg.rows()
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let q = self.q;
        match (i < q, j < q) {
            (true, true) => self.qq.get(i, j),
            (true, false) => self.qg.get(i, j - q),
            (false, true) => self.qg.get(j, i - q),
            (false, false) => self.gg.get(i - q, j - q),
        }
    }

    fn row_into(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.len()).map(|j| self.get(i, j)));
    }
}

/// Rounds `k / 2` half-to-even, matching the reference implementation.
pub(crate) fn half_k(k: usize) -> usize {
    (k as f64 / 2.0).round_ties_even() as usize
}

/// Members `j` of the first `k + 1` ranks of `probe` whose own first `k + 1`
/// ranks contain `probe`, in rank order.
pub(crate) fn reciprocal_set(ranks: &[Vec<usize>], probe: usize, k: usize) -> Vec<usize> {
    let forward = &ranks[probe][..(k + 1).min(ranks[probe].len())];
    forward
        .iter()
        .copied()
        .filter(|&c| {
            let back = &ranks[c][..(k + 1).min(ranks[c].len())];
            back.contains(&probe)
        })
        .collect()
}

/// The reciprocal set of `probe`, optionally grown by every member's
/// half-size reciprocal set that overlaps it by more than two thirds.
/// Returned sorted and deduplicated.
pub(crate) fn expanded_set(ranks: &[Vec<usize>], probe: usize, k: usize, expand: bool) -> Vec<usize> {
    let base = reciprocal_set(ranks, probe, k);
    let mut out = base.clone();
    if expand {
        let half = half_k(k);
        for &cand in &base {
            let cand_set = reciprocal_set(ranks, cand, half);
            let overlap = cand_set.iter().filter(|c| base.contains(c)).count();
            if overlap as f64 > 2.0 / 3.0 * cand_set.len() as f64 {
                out.extend_from_slice(&cand_set);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// k-reciprocal neighbors of `probe_index` in a square distance matrix over
/// the pooled probe and gallery set.
pub fn k_reciprocal_neighbors(
    dist_all: &DistanceMatrix,
    probe_index: usize,
    k: usize,
    expand: bool,
) -> Result<Vec<usize>> {
    if !dist_all.is_square() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            dist_all.rows(),
            dist_all.cols()
        )));
    }
    let n = dist_all.rows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k={k} must be in 1..={n}")));
    }
    if probe_index >= n {
        return Err(Error::Parameter(format!("probe {probe_index} out of range {n}")));
    }
    let depth = (k + 1).min(n);
    let ranks: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| top_k_row(dist_all.row(i), depth))
        .collect();
    Ok(expanded_set(&ranks, probe_index, k, expand))
}

type SparseRow = Vec<(usize, f64)>;

/// Re-ranked probe-to-gallery distances, same shape as `dist_qg`.
pub fn rerank(
    dist_qg: &DistanceMatrix,
    dist_qq: &DistanceMatrix,
    dist_gg: &DistanceMatrix,
    params: &RerankParams,
) -> Result<DistanceMatrix> {
    params.validate()?;
    let (q, g) = (dist_qg.rows(), dist_qg.cols());
    if dist_qq.rows() != q || dist_qq.cols() != q {
        return Err(Error::Shape(format!(
            "probe-probe matrix is {}x{}, expected {q}x{q}",
            dist_qq.rows(),
            dist_qq.cols()
        )));
    }
    if dist_gg.rows() != g || dist_gg.cols() != g {
        return Err(Error::Shape(format!(
            "gallery-gallery matrix is {}x{}, expected {g}x{g}",
            dist_gg.rows(),
            dist_gg.cols()
        )));
    }
    if params.lambda == 1.0 && params.transform == DistanceTransform::Identity {
        return Ok(dist_qg.clone());
    }

    let pool = Pool {
        qg: dist_qg,
        qq: dist_qq,
        gg: dist_gg,
        q,
    };
    let n = pool.len();
    let depth = (params.k1 + 1).max(params.k2).min(n);

    // Per-row scale applied to the transformed distances: 1 / max of row.
    let row_scale: Vec<f64> = match params.transform {
        DistanceTransform::Identity => vec![1.0; n],
        DistanceTransform::SquaredRowMax => (0..n)
            .into_par_iter()
            .map(|i| {
                let m = (0..n).map(|j| pool.get(i, j).powi(2)).fold(0.0, f64::max);
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            })
            .collect(),
    };
    let transformed = |i: usize, j: usize| -> f64 {
        match params.transform {
            DistanceTransform::Identity => pool.get(i, j),
            DistanceTransform::SquaredRowMax => pool.get(i, j).powi(2) * row_scale[i],
        }
    };

    let ranks: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            pool.row_into(i, buf);
            top_k_row(buf, depth)
        })
        .collect();

    // Kernel-weighted encoding of each expanded reciprocal set.
    let encoded: Vec<SparseRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let members = expanded_set(&ranks, i, params.k1, true);
            let ds: Vec<f64> = members.iter().map(|&j| transformed(i, j)).collect();
            // Shifting by the minimum leaves the normalized weights unchanged
            // and keeps large distances from underflowing to an all-zero row.
            let shift = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = ds.iter().map(|d| (-(d - shift)).exp()).collect();
            let total: f64 = w.iter().sum();
            members
                .into_iter()
                .zip(w)
                .map(|(j, wj)| (j, wj / total))
                .collect()
        })
        .collect();

    let encoded = if params.k2 != 1 {
        query_expand(&encoded, &ranks, params.k2, n)
    } else {
        encoded
    };

    // Inverted index: for every pool column, the rows with a nonzero weight.
    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (row, v) in encoded.iter().enumerate() {
        for &(col, w) in v {
            if w != 0.0 {
                inverted[col].push((row, w));
            }
        }
    }

    let lambda = params.lambda;
    let mut values = vec![0.0; q * g];
    values
        .par_chunks_mut(g.max(1))
        .enumerate()
        .take(q)
        .for_each_init(
            || vec![0.0f64; g],
            |shared, (i, out)| {
                shared.iter_mut().for_each(|s| *s = 0.0);
                for &(col, wi) in &encoded[i] {
                    if wi == 0.0 {
                        continue;
                    }
                    for &(row, wr) in &inverted[col] {
                        if row >= q {
                            shared[row - q] += wi.min(wr);
                        }
                    }
                }
                for (j, o) in out.iter_mut().enumerate() {
                    let s = shared[j];
                    let jaccard = (1.0 - s / (2.0 - s)).max(0.0);
                    *o = (1.0 - lambda) * jaccard + lambda * transformed(i, q + j);
                }
            },
        );

    DistanceMatrix::new(
        values,
        dist_qg.metric(),
        dist_qg.row_ids().to_vec(),
        dist_qg.col_ids().to_vec(),
    )
}

/// Replaces every encoded vector by the mean over its `k2` nearest points.
fn query_expand(encoded: &[SparseRow], ranks: &[Vec<usize>], k2: usize, n: usize) -> Vec<SparseRow> {
    (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], Vec::<usize>::new()),
            |(acc, touched), i| {
                let nbrs = &ranks[i][..k2.min(ranks[i].len())];
                for &r in nbrs {
                    for &(col, w) in &encoded[r] {
                        if acc[col] == 0.0 {
                            touched.push(col);
                        }
                        acc[col] += w;
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                let denom = k2 as f64;
                let row: SparseRow = touched.iter().map(|&c| (c, acc[c] / denom)).collect();
                for &c in touched.iter() {
                    acc[c] = 0.0;
                }
                touched.clear();
                row
            },
        )
        .collect()
}

/// Square matrix over the pooled probe + gallery set, for
/// [`k_reciprocal_neighbors`] and the CLI.
pub fn pool_matrix(
    dist_qg: &DistanceMatrix,
    dist_qq: &DistanceMatrix,
    dist_gg: &DistanceMatrix,
) -> Result<DistanceMatrix> {
    let q = dist_qg.rows();
    let pool = Pool {
        qg: dist_qg,
        qq: dist_qq,
        gg: dist_gg,
        q,
    };
    let n = pool.len();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        values.extend((0..n).map(|j| pool.get(i, j)));
    }
    let ids: Vec<String> = dist_qg
        .row_ids()
        .iter()
        .chain(dist_qg.col_ids())
        .cloned()
        .collect();
    DistanceMatrix::new(values, dist_qg.metric(), ids.clone(), ids)
}

/// Splits a square pooled matrix whose first `q` rows are probes into
/// `(qg, qq, gg)` blocks.
pub fn split_pool(all: &DistanceMatrix, q: usize) -> Result<(DistanceMatrix, DistanceMatrix, DistanceMatrix)> {
    if !all.is_square() {
        return Err(Error::Shape("pooled matrix must be square".into()));
    }
    if q == 0 || q >= all.rows() {
        return Err(Error::Parameter(format!(
            "query count {q} must be in 1..{}",
            all.rows()
        )));
    }
    let qs: Vec<usize> = (0..q).collect();
    let gs: Vec<usize> = (q..all.rows()).collect();
    Ok((all.select(&qs, &gs), all.select(&qs, &qs), all.select(&gs, &gs)))
}

//! Pairwise distances and nearest-neighbor lists.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emb1::Emb1;
use crate::embedding::{norm, EmbeddingSet};
use crate::error::{Error, Result};

/// Row tile height used by [`distance_matrix`].
const ROW_BLOCK: usize = 16;
/// Column tile width used by [`distance_matrix`].
const COL_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    SquaredEuclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`.
    CosineDistance,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SquaredEuclidean => "squared_euclidean",
            Metric::CosineDistance => "cosine_distance",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "squared_euclidean" | "sqeuclidean" => Ok(Metric::SquaredEuclidean),
            "cosine_distance" | "cosine" => Ok(Metric::CosineDistance),
            other => Err(Error::Parameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// A dense `rows x cols` matrix of nonnegative distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    metric: Metric,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl DistanceMatrix {
    pub fn new(
        values: Vec<f64>,
        metric: Metric,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Input(format!("distance {v} is negative or NaN")));
        }
        Ok(DistanceMatrix {
            rows,
            cols,
            values,
            metric,
            row_ids,
            col_ids,
        })
    }

    /// Matrix with generated ids `r0..`, `c0..`; handy for tests and tools.
    pub fn from_rows(rows: &[Vec<f64>], metric: Metric) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged distance rows".into()));
        }
        Self::new(
            rows.iter().flatten().copied().collect(),
            metric,
            (0..rows.len()).map(|i| format!("r{i}")).collect(),
            (0..cols).map(|j| format!("c{j}")).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> DistanceMatrix {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.get(i, j);
            }
        }
        DistanceMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
            metric: self.metric,
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
        }
    }

    /// Sub-matrix on the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DistanceMatrix {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let r = self.row(i);
            values.extend(cols.iter().map(|&j| r[j]));
        }
        DistanceMatrix {
            rows: rows.len(),
            cols: cols.len(),
            values,
            metric: self.metric,
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            col_ids: cols.iter().map(|&j| self.col_ids[j].clone()).collect(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Writes the values as `EMB1` (`f32`) plus a JSON sidecar at
    /// [`sidecar_path`] holding the metric and identifiers.
    pub fn save(&self, path: impl AsRef<Path>, query_count: Option<usize>) -> Result<()> {
        let path = path.as_ref();
        Emb1 {
            rows: self.rows,
            cols: self.cols,
            data: self.values.iter().map(|&v| v as f32).collect(),
        }
        .write(path)?;
        let side = DistanceSidecar {
            metric: self.metric,
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
            query_count,
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(sp, e))
    }

    /// Reads a matrix written by [`DistanceMatrix::save`]. Also returns the
    /// optional query count recorded for all-pairs matrices.
    pub fn load(path: impl AsRef<Path>) -> Result<(DistanceMatrix, Option<usize>)> {
        let path = path.as_ref();
        let m = Emb1::read(path)?;
        let sp = sidecar_path(path);
        let raw = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: DistanceSidecar = serde_json::from_slice(&raw)?;
        if side.row_ids.len() != m.rows || side.col_ids.len() != m.cols {
            return Err(Error::Integrity(format!(
                "matrix is {}x{} but sidecar lists {} rows and {} cols",
                m.rows,
                m.cols,
                side.row_ids.len(),
                side.col_ids.len()
            )));
        }
        let dm = DistanceMatrix::new(
            m.data.into_iter().map(f64::from).collect(),
            side.metric,
            side.row_ids,
            side.col_ids,
        )?;
        Ok((dm, side.query_count))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DistanceSidecar {
    metric: Metric,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_count: Option<usize>,
}

/// `dist.emb1` -> `dist.emb1.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Distance between two vectors under `metric`. For cosine distance the
/// norms are passed in so callers can precompute them.
#[inline]
fn pair_distance(metric: Metric, a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    match metric {
        Metric::Euclidean => squared_euclidean(a, b).sqrt(),
        Metric::SquaredEuclidean => squared_euclidean(a, b),
        Metric::CosineDistance => (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0),
    }
}

/// Distance between two raw vectors under `metric`.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    pair_distance(metric, a, b, norm(a), norm(b))
}

/// Dense distance matrix between the rows of `a` and the rows of `b`.
///
/// Work is tiled into row/column blocks and spread over the rayon pool. Every
/// entry is computed independently, so the result does not depend on the
/// number of threads.
pub fn distance_matrix(a: &EmbeddingSet, b: &EmbeddingSet, metric: Metric) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = match metric {
        Metric::CosineDistance => (row_norms(a)?, row_norms(b)?),
        _ => (vec![1.0; a.len()], vec![1.0; b.len()]),
    };
    let values = raw_distance_matrix(a.features(), b.features(), a.dim(), metric, &na, &nb);
    DistanceMatrix::new(values, metric, a.ids(), b.ids())
}

fn row_norms(s: &EmbeddingSet) -> Result<Vec<f64>> {
    s.rows()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm {
                    row: i,
                    id: s.meta()[i].id.clone(),
                })
            }
        })
        .collect()
}

/// Core tiled kernel over flat row-major buffers.
pub(crate) fn raw_distance_matrix(
    a: &[f64],
    b: &[f64],
    dim: usize,
    metric: Metric,
    na: &[f64],
    nb: &[f64],
) -> Vec<f64> {
    let rows = a.len() / dim;
    let cols = b.len() / dim;
    let mut values = vec![0.0; rows * cols];
    if cols == 0 {
        return values;
    }
    values
        .par_chunks_mut(ROW_BLOCK * cols)
        .enumerate()
        .for_each(|(blk, out)| {
            let r0 = blk * ROW_BLOCK;
            let nrows = out.len() / cols;
            for c0 in (0..cols).step_by(COL_BLOCK) {
                let c1 = (c0 + COL_BLOCK).min(cols);
                for i in 0..nrows {
                    let ai = &a[(r0 + i) * dim..(r0 + i + 1) * dim];
                    let out_row = &mut out[i * cols..(i + 1) * cols];
                    for j in c0..c1 {
                        let bj = &b[j * dim..(j + 1) * dim];
                        out_row[j] = pair_distance(metric, ai, bj, na[r0 + i], nb[j]);
                    }
                }
            }
        });
    values
}

#[inline]
pub(crate) fn cmp_by_value_then_index(row: &[f64], a: usize, b: usize) -> Ordering {
    row[a].total_cmp(&row[b]).then(a.cmp(&b))
}

/// Every column index of `row`, ascending by distance, ties by lower index.
pub fn argsort_row(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_unstable_by(|&a, &b| cmp_by_value_then_index(row, a, b));
    idx
}

/// The `k` smallest entries of `row`, ascending, ties by lower index.
pub fn top_k_row(row: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(row.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| cmp_by_value_then_index(row, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| cmp_by_value_then_index(row, a, b));
    idx
}

/// For each row, the `k` nearest column indices in ascending distance order.
pub fn top_k_neighbors(dist: &DistanceMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > dist.cols() {
        return Err(Error::Parameter(format!(
            "k={k} must be in 1..={}",
            dist.cols()
        )));
    }
    Ok((0..dist.rows())
        .into_par_iter()
        .map(|i| top_k_row(dist.row(i), k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{ImageMeta, Split};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet {
        let meta = (0..rows.len())
            .map(|i| ImageMeta::new(format!("i{i}"), Split::Gallery))
            .collect();
        EmbeddingSet::from_rows(rows, meta).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        set((0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect())
    }

    #[test]
    fn zero_and_orthogonal() {
        let a = set(vec![vec![1.0, 0.0]]);
        let b = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d = distance_matrix(&a, &b, Metric::Euclidean).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert!((d.get(0, 1) - 1.414_213_56).abs() < 1e-8);
    }

    #[test]
    fn matches_naive_double_loop() {
        let a = random(20, 8, 1);
        let b = random(30, 8, 2);
        for metric in [Metric::Euclidean, Metric::SquaredEuclidean, Metric::CosineDistance] {
            let d = distance_matrix(&a, &b, metric).unwrap();
            for i in 0..20 {
                for j in 0..30 {
                    let (x, y) = (a.row(i), b.row(j));
                    let mut ss = 0.0;
                    let mut xy = 0.0;
                    let mut xx = 0.0;
                    let mut yy = 0.0;
                    for k in 0..8 {
                        ss += (x[k] - y[k]) * (x[k] - y[k]);
                        xy += x[k] * y[k];
                        xx += x[k] * x[k];
                        yy += y[k] * y[k];
                    }
                    let want = match metric {
                        Metric::Euclidean => ss.sqrt(),
                        Metric::SquaredEuclidean => ss,
                        Metric::CosineDistance => 1.0 - xy / (xx.sqrt() * yy.sqrt()),
                    };
                    assert!((d.get(i, j) - want).abs() < 1e-9, "{metric} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let a = random(2, 3, 0);
        let b = random(2, 4, 0);
        assert!(matches!(
            distance_matrix(&a, &b, Metric::Euclidean),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn top_k_examples() {
        let d = DistanceMatrix::from_rows(&[vec![0.5, 0.1, 0.9]], Metric::Euclidean).unwrap();
        assert_eq!(top_k_neighbors(&d, 2).unwrap(), vec![vec![1, 0]]);
        let d = DistanceMatrix::from_rows(&[vec![0.2, 0.2]], Metric::Euclidean).unwrap();
        assert_eq!(top_k_neighbors(&d, 1).unwrap(), vec![vec![0]]);
        assert!(matches!(top_k_neighbors(&d, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn top_k_matches_full_argsort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..500).map(|_| rng.random_range(0.0..2.0)).collect())
            .collect();
        let d = DistanceMatrix::from_rows(&rows, Metric::Euclidean).unwrap();
        let got = top_k_neighbors(&d, 10).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let mut full: Vec<usize> = (0..row.len()).collect();
            full.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
            assert_eq!(got[i], full[..10].to_vec());
        }
    }

    #[test]
    fn save_load_keeps_metric_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.emb1");
        let d = distance_matrix(&random(3, 4, 5), &random(5, 4, 6), Metric::CosineDistance).unwrap();
        d.save(&p, Some(3)).unwrap();
        let (back, qc) = DistanceMatrix::load(&p).unwrap();
        assert_eq!(qc, Some(3));
        assert_eq!(back.metric(), Metric::CosineDistance);
        assert_eq!(back.row_ids(), d.row_ids());
        for (x, y) in back.values().iter().zip(d.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn self_distance_symmetric_zero_diagonal(seed in 0u64..1000, n in 1usize..25, dim in 1usize..20) {
            let a = random(n, dim, seed);
            let d = distance_matrix(&a, &a, Metric::Euclidean).unwrap();
            for i in 0..n {
                prop_assert!(d.get(i, i).abs() < 1e-6);
                for j in 0..n {
                    prop_assert!((d.get(i, j) - d.get(j, i)).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn unit_rows_relate_euclidean_and_cosine(seed in 0u64..1000, n in 1usize..20, dim in 1usize..20) {
            let a = random(n, dim, seed).l2_normalize().unwrap();
            let e = distance_matrix(&a, &a, Metric::SquaredEuclidean).unwrap();
            let c = distance_matrix(&a, &a, Metric::CosineDistance).unwrap();
            for (x, y) in e.values().iter().zip(c.values()) {
                prop_assert!((x - 2.0 * y).abs() < 1e-6);
            }
        }

        #[test]
        fn normalize_is_idempotent(seed in 0u64..1000, n in 1usize..20, dim in 1usize..20) {
            let once = random(n, dim, seed).l2_normalize().unwrap();
            let twice = once.l2_normalize().unwrap();
            for (x, y) in once.features().iter().zip(twice.features()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn top_k_is_deterministic(seed in 0u64..1000, k in 1usize..30) {
            let a = random(10, 4, seed);
            let b = random(30, 4, seed + 1);
            let d = distance_matrix(&a, &b, Metric::Euclidean).unwrap();
            prop_assert_eq!(top_k_neighbors(&d, k).unwrap(), top_k_neighbors(&d, k).unwrap());
        }
    }
}

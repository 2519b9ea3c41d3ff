//! Test-only oracles. Deliberately naive: dense matrices, plain loops, no
//! shared code with the library's implementation paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reidpost::{DistanceMatrix, EmbeddingSet, ImageMeta, Metric, Split};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-norm Gaussian rows with generic ids.
pub fn unit_rows(n: usize, d: usize, seed: u64, prefix: &str) -> EmbeddingSet {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let meta = (0..n)
        .map(|i| ImageMeta::new(format!("{prefix}{i}"), Split::Gallery))
        .collect();
    EmbeddingSet::from_rows(rows, meta).unwrap()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

pub fn dense(a: &EmbeddingSet, b: &EmbeddingSet) -> Vec<Vec<f64>> {
    (0..a.len())
        .map(|i| (0..b.len()).map(|j| euclid(a.row(i), b.row(j))).collect())
        .collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DistanceMatrix {
    DistanceMatrix::from_rows(rows, Metric::Euclidean).unwrap()
}

/// Stable argsort, ties by lower index.
pub fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
    idx
}

fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - 1.0
    } else {
        r
    }
}

/// Line-by-line transliteration of the published k-reciprocal re-ranking
/// procedure over dense matrices. With `squared_rowmax` the pooled
/// distances are squared and normalized as in the published code;
/// otherwise they are used as given.
pub fn kreciprocal_oracle(
    qg: &[Vec<f64>],
    qq: &[Vec<f64>],
    gg: &[Vec<f64>],
    k1: usize,
    k2: usize,
    lambda: f64,
    squared_rowmax: bool,
) -> Vec<Vec<f64>> {
    let q = qg.len();
    let g = gg.len();
    let n = q + g;
    // original_dist = [[qq, qg], [qg^T, gg]]
    let mut original = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            original[i][j] = if i < q && j < q {
                qq[i][j]
            } else if i < q {
                qg[i][j - q]
            } else if j < q {
                qg[j][i - q]
            } else {
                gg[i - q][j - q]
            };
        }
    }
    if squared_rowmax {
        for row in original.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * *v;
            }
        }
        // transpose(original / max(original, axis=0))
        let colmax: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| original[i][j]).fold(f64::MIN, f64::max))
            .collect();
        let mut t = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                t[j][i] = original[i][j] / colmax[j];
            }
        }
        original = t;
    }
    let initial_rank: Vec<Vec<usize>> = original.iter().map(|r| argsort(r)).collect();
    let take = |v: &Vec<usize>, k: usize| -> Vec<usize> { v[..k.min(v.len())].to_vec() };

    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        let forward = take(&initial_rank[i], k1 + 1);
        let mut k_reciprocal = Vec::new();
        for &f in &forward {
            if take(&initial_rank[f], k1 + 1).contains(&i) {
                k_reciprocal.push(f);
            }
        }
        let mut expansion = k_reciprocal.clone();
        let half = round_half_even(k1 as f64 / 2.0) as usize;
        for &candidate in &k_reciprocal {
            let cf = take(&initial_rank[candidate], half + 1);
            let mut cand_recip = Vec::new();
            for &c in &cf {
                if take(&initial_rank[c], half + 1).contains(&candidate) {
                    cand_recip.push(c);
                }
            }
            let inter = cand_recip.iter().filter(|c| k_reciprocal.contains(c)).count();
            if inter as f64 > 2.0 / 3.0 * cand_recip.len() as f64 {
                expansion.extend(cand_recip);
            }
        }
        expansion.sort();
        expansion.dedup();
        let weights: Vec<f64> = expansion.iter().map(|&j| (-original[i][j]).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (idx, &j) in expansion.iter().enumerate() {
            v[i][j] = weights[idx] / total;
        }
    }
    if k2 != 1 {
        let mut v_qe = vec![vec![0.0; n]; n];
        for i in 0..n {
            let nb = take(&initial_rank[i], k2);
            for col in 0..n {
                let mut s = 0.0;
                for &r in &nb {
                    s += v[r][col];
                }
                v_qe[i][col] = s / nb.len() as f64;
            }
        }
        v = v_qe;
    }
    let inv_index: Vec<Vec<usize>> = (0..n)
        .map(|col| (0..n).filter(|&r| v[r][col] != 0.0).collect())
        .collect();
    let mut out = vec![vec![0.0; g]; q];
    for i in 0..q {
        let mut temp_min = vec![0.0; n];
        for ind in (0..n).filter(|&c| v[i][c] != 0.0) {
            for &r in &inv_index[ind] {
                temp_min[r] += v[i][ind].min(v[r][ind]);
            }
        }
        for j in 0..g {
            let t = temp_min[q + j];
            let jaccard = 1.0 - t / (2.0 - t);
            out[i][j] = jaccard * (1.0 - lambda) + original[i][q + j] * lambda;
        }
    }
    out
}

/// Average precision by direct transliteration of its definition.
pub fn ap_oracle(list: &[usize], relevant: &[bool], k: usize) -> Option<f64> {
    let n_rel = relevant.iter().filter(|&&r| r).count();
    if n_rel == 0 {
        return None;
    }
    let mut sum = 0.0;
    for pos in 0..list.len().min(k) {
        if relevant[list[pos]] {
            let mut hits = 0;
            for p in 0..=pos {
                if relevant[list[p]] {
                    hits += 1;
                }
            }
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / n_rel.min(k) as f64)
}

/// 1-based position of the first relevant item, if any.
pub fn first_hit(list: &[usize], relevant: &[bool]) -> Option<usize> {
    list.iter().position(|&g| relevant[g]).map(|p| p + 1)
}

/// Batch-hard soft-margin triplet loss and its gradient, by direct loops.
/// The gradient holds each anchor's hardest positive and negative fixed.
pub fn triplet_oracle(rows: &[Vec<f64>], labels: &[usize], margin: f64) -> (f64, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let sq = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += (a[k] - b[k]) * (a[k] - b[k]);
        }
        s
    };
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; d]; n];
    for a in 0..n {
        let mut p = usize::MAX;
        let mut q = usize::MAX;
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if p == usize::MAX || sq(&rows[a], &rows[j]) > sq(&rows[a], &rows[p]) {
                    p = j;
                }
            } else if q == usize::MAX || sq(&rows[a], &rows[j]) < sq(&rows[a], &rows[q]) {
                q = j;
            }
        }
        let z = sq(&rows[a], &rows[p]) - sq(&rows[a], &rows[q]) + margin;
        loss += (1.0 + z.exp()).ln();
        let s = 1.0 / (1.0 + (-z).exp()) / n as f64;
        for k in 0..d {
            grad[a][k] += s * (2.0 * (rows[a][k] - rows[p][k]) - 2.0 * (rows[a][k] - rows[q][k]));
            grad[p][k] += s * (-2.0 * (rows[a][k] - rows[p][k]));
            grad[q][k] += s * (2.0 * (rows[a][k] - rows[q][k]));
        }
    }
    (loss / n as f64, grad)
}

/// Best agreement over every one-to-one map between predicted and true
/// labels, by exhaustive search.
pub fn brute_force_matching(pairs: &[(usize, usize)]) -> f64 {
    let np = pairs.iter().map(|p| p.0).max().unwrap() + 1;
    let nt = pairs.iter().map(|p| p.1).max().unwrap() + 1;
    let mut table = vec![vec![0usize; nt]; np];
    for &(p, t) in pairs {
        table[p][t] += 1;
    }
    fn go(table: &[Vec<usize>], p: usize, used: &mut Vec<bool>) -> usize {
        if p == table.len() {
            return 0;
        }
        // leave p unmatched
        let mut best = go(table, p + 1, used);
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                best = best.max(table[p][t] + go(table, p + 1, used));
                used[t] = false;
            }
        }
        best
    }
    go(&table, 0, &mut vec![false; nt]) as f64 / pairs.len() as f64
}

/// Stage-1 center selection from a given first center, scanning every
/// candidate at every step.
pub fn stage1_oracle(d: &[Vec<f64>], first: usize, d_n: f64) -> Vec<usize> {
    let mut centers = vec![first];
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..d.len() {
            let mut min = f64::INFINITY;
            let mut sum = 0.0;
            for &c in &centers {
                min = min.min(d[i][c]);
                sum += d[i][c];
            }
            if min > d_n {
                match best {
                    Some((_, s)) if s >= sum => {}
                    _ => best = Some((i, sum)),
                }
            }
        }
        match best {
            Some((i, _)) => centers.push(i),
            None => return centers,
        }
    }
}

/// Stage-2 assignment: nearest center when strictly within `d_p`, lowest
/// center ordinal on ties.
pub fn stage2_oracle(d_to_centers: &[Vec<f64>], d_p: f64) -> Vec<Option<usize>> {
    d_to_centers
        .iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (t, &v) in row.iter().enumerate() {
                if v < d_p && best.is_none_or(|b| v < row[b]) {
                    best = Some(t);
                }
            }
            best
        })
        .collect()
}

/// Clustered unit vectors with vehicle ids, in the given split.
pub fn clustered(centers: usize, per: usize, d: usize, spread: f64, seed: u64, split: Split) -> EmbeddingSet {
    let mut r = rng(seed);
    let cs: Vec<Vec<f64>> = unit_rows(centers, d, seed ^ 0x5eed, "c").rows().map(|x| x.to_vec()).collect();
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (v, c) in cs.iter().enumerate() {
        for i in 0..per {
            let mut x: Vec<f64> = c
                .iter()
                .map(|&a| a + spread / (d as f64).sqrt() * r.sample::<f64, _>(StandardNormal))
                .collect();
            let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            x.iter_mut().for_each(|a| *a /= n);
            rows.push(x);
            let mut m = ImageMeta::new(format!("{split}{v}_{i}"), split);
            m.vehicle_id = Some(format!("v{v}"));
            meta.push(m);
        }
    }
    EmbeddingSet::from_rows(rows, meta).unwrap()
}

mod support;

use reidpost::distance::argsort_row;
use reidpost::rerank::{k_reciprocal_neighbors, pool_matrix, rerank, DistanceTransform, RerankParams};
use support::*;

fn instance(q: usize, g: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let qs = unit_rows(q, d, seed, "q");
    let gs = unit_rows(g, d, seed + 1000, "g");
    (dense(&qs, &gs), dense(&qs, &qs), dense(&gs, &gs))
}

#[test]
fn matches_transliteration_both_transforms() {
    for seed in 0..10 {
        let (qg, qq, gg) = instance(10, 30, 8, seed);
        for (transform, sq) in [
            (DistanceTransform::Identity, false),
            (DistanceTransform::SquaredRowMax, true),
        ] {
            let want = kreciprocal_oracle(&qg, &qq, &gg, 5, 3, 0.3, sq);
            let params = RerankParams::new(5, 3, 0.3).unwrap().with_transform(transform);
            let got = rerank(&to_matrix(&qg), &to_matrix(&qq), &to_matrix(&gg), &params).unwrap();
            for i in 0..10 {
                for j in 0..30 {
                    assert!(
                        (got.get(i, j) - want[i][j]).abs() < 1e-6,
                        "seed {seed} {transform:?} ({i},{j}): {} vs {}",
                        got.get(i, j),
                        want[i][j]
                    );
                }
            }
        }
    }
}

#[test]
fn matches_transliteration_with_default_params_and_k2_one() {
    let (qg, qq, gg) = instance(15, 60, 16, 77);
    for (k1, k2) in [(20, 6), (7, 1), (4, 4)] {
        let want = kreciprocal_oracle(&qg, &qq, &gg, k1, k2, 0.3, false);
        let got = rerank(
            &to_matrix(&qg),
            &to_matrix(&qq),
            &to_matrix(&gg),
            &RerankParams::new(k1, k2, 0.3).unwrap(),
        )
        .unwrap();
        for i in 0..15 {
            for j in 0..60 {
                assert!((got.get(i, j) - want[i][j]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn lambda_one_preserves_row_order() {
    for seed in 0..5 {
        let (qg, qq, gg) = instance(8, 25, 6, seed);
        for transform in [DistanceTransform::Identity, DistanceTransform::SquaredRowMax] {
            let p = RerankParams::new(5, 3, 1.0).unwrap().with_transform(transform);
            let out = rerank(&to_matrix(&qg), &to_matrix(&qq), &to_matrix(&gg), &p).unwrap();
            for (i, row) in qg.iter().enumerate() {
                assert_eq!(argsort_row(out.row(i)), argsort(row));
            }
        }
    }
}

#[test]
fn two_separated_clusters_keep_cluster_order() {
    // cluster A around +e0, cluster B around -e0
    let mut r = rng(5);
    let mk = |sign: f64, r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        use rand::Rng;
        let mut v: Vec<f64> = (0..8).map(|_| r.random_range(-0.1..0.1)).collect();
        v[0] += sign;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let queries: Vec<Vec<f64>> = (0..3).map(|_| mk(1.0, &mut r)).collect();
    let gallery: Vec<Vec<f64>> = (0..24).map(|j| mk(if j % 2 == 0 { 1.0 } else { -1.0 }, &mut r)).collect();
    let d = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter().map(|x| b.iter().map(|y| euclid(x, y)).collect()).collect()
    };
    let (qg, qq, gg) = (d(&queries, &gallery), d(&queries, &queries), d(&gallery, &gallery));
    let out = rerank(&to_matrix(&qg), &to_matrix(&qq), &to_matrix(&gg), &RerankParams::new(5, 3, 0.3).unwrap()).unwrap();
    for i in 0..3 {
        let order = argsort_row(out.row(i));
        let first_b = order.iter().position(|j| j % 2 == 1).unwrap();
        assert!(order[first_b..].iter().all(|j| j % 2 == 1), "query {i}: {order:?}");
        assert_eq!(first_b, 12);
    }
}

#[test]
fn output_is_finite_nonnegative_and_gallery_permutation_equivariant() {
    let qs = unit_rows(6, 8, 41, "q");
    let gs = unit_rows(20, 8, 42, "g");
    let perm: Vec<usize> = (0..20).rev().collect();
    let gp = gs.select(&perm).unwrap();
    let p = RerankParams::new(5, 3, 0.3).unwrap();
    let base = rerank(&to_matrix(&dense(&qs, &gs)), &to_matrix(&dense(&qs, &qs)), &to_matrix(&dense(&gs, &gs)), &p).unwrap();
    let permuted = rerank(&to_matrix(&dense(&qs, &gp)), &to_matrix(&dense(&qs, &qs)), &to_matrix(&dense(&gp, &gp)), &p).unwrap();
    for i in 0..6 {
        for (pj, &j) in perm.iter().enumerate() {
            let v = base.get(i, j);
            assert!(v.is_finite() && v >= 0.0);
            assert!((v - permuted.get(i, pj)).abs() < 1e-12);
        }
    }
}

#[test]
fn reciprocal_sets_match_brute_force_definition() {
    let pts = unit_rows(40, 6, 3, "p");
    let all = dense(&pts, &pts);
    let m = to_matrix(&all);
    let k = 5;
    for probe in 0..40 {
        let topk = |i: usize| argsort(&all[i])[..k + 1].to_vec();
        let mut want: Vec<usize> = (0..40)
            .filter(|&j| topk(probe).contains(&j) && topk(j).contains(&probe))
            .collect();
        want.sort();
        assert_eq!(k_reciprocal_neighbors(&m, probe, k, false).unwrap(), want);
        let expanded = k_reciprocal_neighbors(&m, probe, k, true).unwrap();
        assert!(want.iter().all(|j| expanded.contains(j)));
    }
}

#[test]
fn pooled_matrix_feeds_reciprocal_neighbors() {
    let (qg, qq, gg) = instance(4, 10, 5, 8);
    let pool = pool_matrix(&to_matrix(&qg), &to_matrix(&qq), &to_matrix(&gg)).unwrap();
    assert_eq!(pool.rows(), 14);
    let s = k_reciprocal_neighbors(&pool, 0, 3, true).unwrap();
    assert!(s.contains(&0));
}

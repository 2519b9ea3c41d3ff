mod support;

use rand::Rng;
use reidpost::mining::{im_stage1, im_stage2, identity_mine, kmeans_baseline, validate_labels, MiningParams};
use reidpost::{distance_matrix, Error, Metric, Split};
use support::*;

#[test]
fn three_clusters_one_center_each_in_oracle_order() {
    for seed in 0..8 {
        let q = clustered(3, 30, 16, 0.1, seed, Split::Query);
        let d = dense(&q, &q);
        let p = MiningParams::new(0.8, 0.3, seed).unwrap();
        let centers = im_stage1(&to_matrix(&d), &p).unwrap();
        assert_eq!(centers, stage1_oracle(&d, centers[0], 0.8));
        assert_eq!(centers.len(), 3);
        let mut clusters: Vec<usize> = centers.iter().map(|c| c / 30).collect();
        clusters.sort_unstable();
        assert_eq!(clusters, vec![0, 1, 2]);
    }
}

#[test]
fn stage1_matches_oracle_on_random_geometry() {
    for seed in 0..20 {
        let q = unit_rows(60, 4, seed, "q");
        let d = dense(&q, &q);
        let p = MiningParams::new(0.9, 0.3, seed).unwrap();
        let centers = im_stage1(&to_matrix(&d), &p).unwrap();
        assert_eq!(centers, stage1_oracle(&d, centers[0], 0.9), "seed {seed}");
    }
}

#[test]
fn stage1_degenerate_cases() {
    let p = MiningParams::new(0.49, 0.23, 3).unwrap();
    assert_eq!(im_stage1(&to_matrix(&[vec![0.0]]), &p).unwrap(), vec![0]);
    let close = vec![vec![0.0, 0.1, 0.2], vec![0.1, 0.0, 0.1], vec![0.2, 0.1, 0.0]];
    assert_eq!(im_stage1(&to_matrix(&close), &p).unwrap().len(), 1);
    let empty = reidpost::DistanceMatrix::new(vec![], Metric::Euclidean, vec![], vec![]).unwrap();
    assert!(matches!(im_stage1(&empty, &p), Err(Error::Input(_))));
}

#[test]
fn stage2_matches_oracle() {
    let mut r = rng(5);
    for _ in 0..20 {
        let n = 50;
        let t = r.random_range(1..6);
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| r.random_range(0.0..0.6)).collect()).collect();
        let centers: Vec<usize> = (0..t).map(|i| i * 7).collect();
        for (k, &c) in centers.iter().enumerate() {
            rows[c][k] = 0.0;
        }
        let p = MiningParams::new(0.7, 0.25, 0).unwrap();
        let labels = im_stage2(&to_matrix(&rows), &centers, &p).unwrap();
        let want = stage2_oracle(&rows, 0.25);
        for (x, w) in want.iter().enumerate() {
            assert_eq!(labels.label_of(x), *w, "sample {x}");
        }
    }
}

#[test]
fn stage2_nearest_of_two_qualifying_centers() {
    let rows = vec![vec![0.0, 0.6], vec![0.6, 0.0], vec![0.10, 0.20], vec![0.5, 0.3]];
    let p = MiningParams::new(0.49, 0.23, 0).unwrap();
    let labels = im_stage2(&to_matrix(&rows), &[0, 1], &p).unwrap();
    assert_eq!(labels.label_of(2), Some(0));
    assert_eq!(labels.label_of(3), None);
    assert!(matches!(im_stage2(&to_matrix(&rows), &[], &p), Err(Error::Input(_))));
}

#[test]
fn single_cluster_gets_one_pseudo_id() {
    let q = clustered(1, 10, 8, 0.05, 1, Split::Query);
    let g = clustered(1, 20, 8, 0.05, 2, Split::Gallery);
    let p = MiningParams::new(0.49, 0.23, 0).unwrap();
    let labels = identity_mine(&q, &g, &p).unwrap();
    assert_eq!(labels.centers().len(), 1);
    let pool = q.concat(&g).unwrap();
    let c = pool.row(labels.centers()[0]);
    for (x, row) in pool.rows().enumerate() {
        assert_eq!(labels.label_of(x).is_some(), euclid(row, c) < 0.23);
    }
}

#[test]
fn mining_is_deterministic_and_valid() {
    let q = clustered(8, 4, 16, 0.3, 3, Split::Query);
    let g = clustered(8, 12, 16, 0.3, 4, Split::Gallery);
    for iterate in [false, true] {
        let mut p = MiningParams::new(0.7, 0.3, 9).unwrap();
        p.restarts = 3;
        p.iterate = iterate;
        let a = identity_mine(&q, &g, &p).unwrap();
        let b = identity_mine(&q, &g, &p).unwrap();
        assert_eq!(a, b);
        let pool = q.concat(&g).unwrap();
        let dqq = distance_matrix(&q, &q, Metric::Euclidean).unwrap();
        let centers = q.select(a.centers()).unwrap();
        let dac = distance_matrix(&pool, &centers, Metric::Euclidean).unwrap();
        validate_labels(&a, &dqq, &dac).unwrap();
    }
}

#[test]
fn labels_jsonl_layout() {
    let q = clustered(2, 2, 4, 0.01, 1, Split::Query);
    let g = clustered(2, 2, 4, 0.01, 1, Split::Gallery);
    let labels = identity_mine(&q, &g, &MiningParams::new(0.49, 0.23, 0).unwrap()).unwrap();
    let ids = q.concat(&g).unwrap().ids();
    let text = labels.to_jsonl(&ids).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.get("id").is_some() && first.get("pseudo_id").is_some() && first.get("is_center").is_some());
    assert_eq!(text.lines().count(), labels.assignments().len());
}

#[test]
fn kmeans_inertia_descends() {
    let set = clustered(6, 34, 8, 0.6, 21, Split::Train).select(&(0..200).collect::<Vec<_>>()).unwrap();
    let r = kmeans_baseline(&set, 6, 4, 100).unwrap();
    for w in r.inertia_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
    assert!(r.inertia <= r.inertia_history[0] + 1e-9);
    // recompute from scratch
    let dim = set.dim();
    let mut want = 0.0;
    for (i, row) in set.rows().enumerate() {
        let c = &r.centroids[r.assignments[i] * dim..(r.assignments[i] + 1) * dim];
        want += euclid(row, c).powi(2);
    }
    assert!((r.inertia - want).abs() < 1e-9 * want.max(1.0));
    assert_eq!(r.assignments.len(), 200);
    assert_eq!(kmeans_baseline(&set, 6, 4, 100).unwrap().assignments, r.assignments);
}

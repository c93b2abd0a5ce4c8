mod common;

use common::*;
use npa3d::geometry::{farthest_point_sample, KdTree, PointCloud};
use npa3d::metrics;
use npa3d::util::seeded_rng;
use proptest::prelude::*;

fn cloud_pair(seed: u64, n: usize, m: usize) -> (PointCloud, PointCloud) {
    let mut rng = seeded_rng(seed);
    let a = PointCloud::with_normals(random_points(&mut rng, n, 1.0), random_normals(&mut rng, n)).unwrap();
    let b = PointCloud::with_normals(random_points(&mut rng, m, 1.0), random_normals(&mut rng, m)).unwrap();
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_equal_brute_force(seed in any::<u64>(), n in 1usize..200, m in 1usize..200, tau in 0.01f64..0.8) {
        let (a, b) = cloud_pair(seed, n, m);
        prop_assert_eq!(metrics::chamfer(&a, &b).unwrap(), brute_chamfer(&a, &b));
        prop_assert_eq!(metrics::one_sided_chamfer(&a, &b).unwrap(), brute_one_sided(&a, &b));
        prop_assert_eq!(metrics::fscore(&a, &b, tau).unwrap(), brute_fscore(&a, &b, tau));
        prop_assert_eq!(metrics::hole_ratio(&a, &b, tau).unwrap(), brute_hole_ratio(&a, &b, tau));
        let r = metrics::acc_comp_nc(&a, &b).unwrap();
        prop_assert_eq!([r.acc_mean, r.acc_median, r.comp_mean, r.comp_median, r.nc_mean, r.nc_median], brute_acc_comp_nc(&a, &b));
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(seed in any::<u64>(), n in 1usize..100) {
        let (a, b) = cloud_pair(seed, n, n + 3);
        prop_assert_eq!(metrics::chamfer(&a, &b).unwrap(), metrics::chamfer(&b, &a).unwrap());
        prop_assert_eq!(metrics::chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hole_ratio_is_one_minus_recall(seed in any::<u64>(), tau in 0.01f64..1.0) {
        let (a, b) = cloud_pair(seed, 50, 70);
        let (_, r) = metrics::precision_recall(&a, &b, tau).unwrap();
        prop_assert_eq!(metrics::hole_ratio(&a, &b, tau).unwrap(), 1.0 - r);
    }

    #[test]
    fn fscore_monotone_in_tau(seed in any::<u64>(), t1 in 0.01f64..0.5, dt in 0.0f64..0.5) {
        let (a, b) = cloud_pair(seed, 40, 40);
        prop_assert!(metrics::fscore(&a, &b, t1).unwrap() <= metrics::fscore(&a, &b, t1 + dt).unwrap());
    }

    #[test]
    fn kdtree_knn_matches_sorted_brute_force(seed in any::<u64>(), n in 1usize..150, k in 1usize..12) {
        let mut rng = seeded_rng(seed);
        let pts = random_points(&mut rng, n, 1.0);
        let q = random_points(&mut rng, 5, 1.2);
        let tree = KdTree::build(&pts);
        for p in &q {
            let got: Vec<f64> = tree.knn(p, k).iter().map(|x| x.dist2).collect();
            let mut all: Vec<f64> = pts.iter().map(|x| d2(p, x)).collect();
            all.sort_by(f64::total_cmp);
            all.truncate(k);
            prop_assert_eq!(got.len(), all.len());
            for (g, w) in got.iter().zip(&all) {
                prop_assert!((g - w).abs() <= 1e-15 * w.max(1.0));
            }
        }
    }
}

#[test]
fn fps_matches_exhaustive_greedy() {
    for seed in 0..50u64 {
        let mut rng = seeded_rng(seed);
        for n in [1usize, 2, 5, 17, 40, 64] {
            let pts = random_points(&mut rng, n, 1.0);
            let cloud = PointCloud::new(pts.clone());
            for m in 1..=n.min(16) {
                let start = (seed as usize * 7) % n;
                assert_eq!(farthest_point_sample(&cloud, m, start).unwrap(), brute_fps(&pts, m, start), "seed {seed} n {n} m {m}");
            }
        }
    }
}

#[test]
fn fps_tie_break_on_duplicates() {
    let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
    let got = farthest_point_sample(&PointCloud::new(pts.clone()), 4, 0).unwrap();
    assert_eq!(got, brute_fps(&pts, 4, 0));
    assert_eq!(got, vec![0, 1, 3, 2]);
}

#[test]
fn density_variance_flags_duplicates() {
    let mut rng = seeded_rng(4);
    let mut pts = random_points(&mut rng, 30, 1.0);
    let clean = metrics::density_variance(&PointCloud::new(pts.clone()), 3).unwrap();
    assert!(clean > 0.0);
    pts.push(pts[0]);
    pts.push(pts[0]);
    pts.push(pts[0]);
    assert!(metrics::density_variance(&PointCloud::new(pts), 3).is_err());
}

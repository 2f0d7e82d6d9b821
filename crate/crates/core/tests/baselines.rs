//! Beam-end and histogram baselines.

mod common;

use nalgebra::Point3;
use overlap_loc::baselines::{
    beam_end_log_weight, range_histogram, subsample, wasserstein_1d, BaselineError, KdTree, LikelihoodField,
    RangeHistogram,
};
use overlap_loc::scan::{unproject, SensorIntrinsics};
use overlap_loc::sim::{simulate_scan, UrbanConfig};
use overlap_loc::{PointCloud, Pose2, RangeImage, WorldModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3<f64>> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-2.0..8.0),
            )
        })
        .collect()
}

fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>) -> f64 {
    points.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

#[test]
fn nearest_neighbour_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [1, 2, 17, 1000, 5000] {
        let pts = cloud(&mut rng, n, 30.0);
        let tree = KdTree::new(pts.clone());
        assert_eq!(tree.len(), n);
        // Queries inside the cloud, and far outside it.
        for extent in [30.0, 300.0] {
            for q in cloud(&mut rng, 200, extent) {
                assert_eq!(tree.nearest_distance_squared(&q), Some(brute_nearest(&pts, &q)));
            }
        }
    }
    assert_eq!(KdTree::new(vec![]).nearest_distance_squared(&Point3::origin()), None);
}

#[test]
fn beam_end_weight_sums_gaussian_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let map = cloud(&mut rng, 3000, 20.0);
    // A tiny voxel keeps every map point.
    let field = LikelihoodField::new(&PointCloud::new(map.clone()).unwrap(), 1e-6, 0.4, 50, 1.7).unwrap();
    let query = PointCloud::new(cloud(&mut rng, 400, 15.0)).unwrap();
    let pose = Pose2::new(1.5, -2.0, 0.6);
    let iso = pose.to_isometry(1.7);
    let samples = subsample(&query, 50);
    assert_eq!(samples.len(), 50);
    let expected: f64 = samples.iter().map(|p| -brute_nearest(&map, &(iso * p)) / (2.0 * 0.4 * 0.4)).sum();
    let got = beam_end_log_weight(&query, &pose, &field);
    assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn beam_end_prefers_the_true_pose() {
    let world = WorldModel::urban(&UrbanConfig::default(), 7);
    let intr = SensorIntrinsics { height: 32, width: 360, r_max: 50.0, ..SensorIntrinsics::default() };
    let poses: Vec<Pose2> = (0..=40).map(|i| Pose2::new(80.0 + i as f64, 20.0, 0.0)).collect();
    let map: Vec<Point3<f64>> = poses
        .iter()
        .flat_map(|p| {
            let iso = p.to_isometry(1.7);
            unproject(&simulate_scan(&world, p, &intr, 1.7)).points().iter().map(|q| iso * q).collect::<Vec<_>>()
        })
        .collect();
    let field = LikelihoodField::new(&PointCloud::new(map).unwrap(), 0.1, 0.5, 500, 1.7).unwrap();
    let truth = Pose2::new(100.3, 19.6, 0.4);
    let query = unproject(&simulate_scan(&world, &truth, &intr, 1.7));
    let at_truth = beam_end_log_weight(&query, &truth, &field);
    for (dx, dy, dth) in [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 0.1), (-2.0, 1.0, -0.2)] {
        let off = Pose2::new(truth.x + dx, truth.y + dy, truth.theta + dth);
        assert!(beam_end_log_weight(&query, &off, &field) < at_truth);
    }
}

fn image(ranges: &[f32], r_max: f64) -> RangeImage {
    let intr = SensorIntrinsics { height: 2, width: ranges.len() / 2, fov_up: 5.0, fov_down: 5.0, r_min: 0.1, r_max };
    RangeImage::from_ranges(intr, ranges.to_vec()).unwrap()
}

#[test]
fn histogram_binning() {
    // 4 bins over 40 m: [0,10) [10,20) [20,30) [30,40].
    let img = image(&[1.0, 9.99, 10.0, 25.0, 40.0, -1.0, 39.0, 15.0], 40.0);
    let h = range_histogram(&img, 4).unwrap();
    assert_eq!(h.bins, vec![2.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]);
    assert_eq!(h.bin_width(), 10.0);
    let empty = range_histogram(&image(&[-1.0; 8], 40.0), 4).unwrap();
    assert_eq!(empty.bins, vec![0.25; 4]);
    assert!(matches!(range_histogram(&img, 1), Err(BaselineError::TooFewBins)));
}

fn hist(bins: Vec<f64>) -> RangeHistogram {
    RangeHistogram { r_max: 8.0 * bins.len() as f64, bins }
}

#[test]
fn wasserstein_matches_transport_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let bins = rng.random_range(2..=16);
        let a = hist(common::transport::random_distribution(&mut rng, bins));
        let b = hist(common::transport::random_distribution(&mut rng, bins));
        let oracle = common::transport::transport_cost(&a.bins, &b.bins, a.bin_width());
        let got = wasserstein_1d(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-9, "{got} vs {oracle}");
    }
}

#[test]
fn mismatched_histograms_are_rejected() {
    let a = hist(vec![0.5, 0.5]);
    let b = hist(vec![0.25; 4]);
    assert!(matches!(wasserstein_1d(&a, &b), Err(BaselineError::BinMismatch(2, 4))));
    let c = RangeHistogram { bins: vec![0.5, 0.5], r_max: 3.0 };
    assert!(matches!(wasserstein_1d(&a, &c), Err(BaselineError::RangeMismatch)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wasserstein_is_a_metric(seed in 0u64..100_000, bins in 2usize..=16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = hist(common::transport::random_distribution(&mut rng, bins));
        let b = hist(common::transport::random_distribution(&mut rng, bins));
        let c = hist(common::transport::random_distribution(&mut rng, bins));
        let d = |x: &RangeHistogram, y: &RangeHistogram| wasserstein_1d(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }
}

//! Stub observation model on a tiny grid, with a scripted filter run and a
//! resampling moment check.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use overlap_loc::mcl::{step, systematic_resample, MotionNoise, Observation, OverlapModel};
use overlap_loc::overlap::{ObservationScorer, OverlapError};
use overlap_loc::pose::wrap_degrees;
use overlap_loc::scan::SensorIntrinsics;
use overlap_loc::{FilterParams, OdometryControl, OverlapEstimate, Particle, ParticleSet, PointCloud, RangeImage, VirtualScanGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn tiny() -> SensorIntrinsics {
    SensorIntrinsics { height: 4, width: 8, fov_up: 10.0, fov_down: 10.0, r_min: 0.5, r_max: 40.0 }
}

/// Image whose first `valid` pixels hold range 5.
pub fn image_with(valid: usize) -> RangeImage {
    let ranges = (0..tiny().pixel_count()).map(|i| if i < valid { 5.0 } else { -1.0 }).collect();
    RangeImage::from_ranges(tiny(), ranges).unwrap()
}

/// 4 x 3 grid of 1 m cells at the origin; `occupied` cells get an image
/// with `index + 1` valid pixels, so a stub scorer can tell them apart.
pub fn stub_grid(occupied: &[usize]) -> VirtualScanGrid {
    let mut grid = VirtualScanGrid::new([0.0, 0.0], 1.0, 1.7, (4, 3), tiny());
    for &c in occupied {
        grid.set_scan(c, Some(image_with(c + 1)));
    }
    grid
}

/// Overlap depends on the map cell, yaw on the query; counts its calls.
#[derive(Default)]
pub struct StubScorer {
    pub calls: AtomicUsize,
}

impl StubScorer {
    pub fn overlap_of(map_valid: usize) -> f64 {
        0.05 + 0.07 * map_valid as f64
    }

    pub fn yaw_of(query_valid: usize) -> f64 {
        -170.0 + 37.0 * query_valid as f64
    }
}

impl ObservationScorer for &StubScorer {
    fn score(&self, query: &RangeImage, map_scan: &RangeImage) -> Result<OverlapEstimate, OverlapError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(OverlapEstimate {
            overlap: StubScorer::overlap_of(map_scan.valid_count()),
            yaw_offset: StubScorer::yaw_of(query.valid_count()),
        })
    }
}

/// Runs three filter steps with a stub scorer and returns the largest
/// deviation from a hand-rolled Bayes recursion over poses and weights.
pub fn scripted_bayes_max_error() -> f64 {
    let occupied = [0, 1, 2, 4, 5, 6, 9, 10];
    let grid = stub_grid(&occupied);
    let params = FilterParams { motion: MotionNoise::zero(), resample_fraction: 0.0, ..FilterParams::default() };
    let scorer = StubScorer::default();
    let model = OverlapModel::new(&grid, &scorer, &params);

    let start = vec![
        Particle { x: 0.5, y: 0.5, theta: 0.1, weight: 0.2 },
        Particle { x: 1.2, y: 0.3, theta: -2.0, weight: 0.1 },
        Particle { x: 2.7, y: 1.4, theta: 3.0, weight: 0.3 },
        Particle { x: 0.4, y: 2.6, theta: 1.0, weight: 0.25 },
        Particle { x: 3.5, y: 2.5, theta: -0.5, weight: 0.15 },
    ];
    let controls = [
        OdometryControl { dx: 0.5, dy: 0.0, dtheta: 0.2 },
        OdometryControl { dx: 0.0, dy: 0.4, dtheta: -0.3 },
        OdometryControl { dx: -0.3, dy: 0.2, dtheta: 0.0 },
    ];
    let queries = [image_with(3), image_with(10), image_with(7)];

    let mut ps = ParticleSet::new(start.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut expected = start.clone();
    let mut worst: f64 = 0.0;
    for (u, q) in controls.iter().zip(&queries) {
        let cloud = PointCloud::new(vec![]).unwrap();
        step(&mut ps, u, &model, &Observation { image: q, cloud: &cloud }, &params, &mut rng).unwrap();

        // Hand-rolled: rotate, translate, rotate; then weight by overlap
        // times the Gaussian heading factor, floor off the map.
        let trans = u.dx.hypot(u.dy);
        let rot1 = u.dy.atan2(u.dx);
        for p in &mut expected {
            let heading = p.theta + rot1;
            p.x += trans * heading.cos();
            p.y += trans * heading.sin();
            p.theta = wrap(heading + (u.dtheta - rot1));
            let cell = (p.x >= 0.0 && p.y >= 0.0 && p.x < 4.0 && p.y < 3.0)
                .then(|| p.y.floor() as usize * 4 + p.x.floor() as usize)
                .filter(|c| occupied.contains(c));
            let likelihood = match cell {
                Some(c) => {
                    let residual = wrap_degrees(StubScorer::yaw_of(q.valid_count()) - p.theta.to_degrees());
                    StubScorer::overlap_of(c + 1) * (-residual * residual / (2.0 * 25.0)).exp()
                }
                None => 1e-6,
            };
            p.weight *= likelihood;
        }
        let total: f64 = expected.iter().map(|p| p.weight).sum();
        expected.iter_mut().for_each(|p| p.weight /= total);

        for (a, b) in ps.particles().iter().zip(&expected) {
            let errors = [a.x - b.x, a.y - b.y, wrap(a.theta - b.theta), a.weight - b.weight];
            worst = errors.iter().fold(worst, |m, e| m.max(e.abs()));
        }
    }
    worst
}

pub fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}


/// Copy counts of systematic resampling over seeded rounds.
pub struct CopyStats {
    /// Largest |copies - N w| seen in any round.
    pub max_rounding_gap: f64,
    /// Largest |mean copies - N w| in standard errors of the mean.
    pub max_z: f64,
}

pub fn systematic_copy_stats(weights: &[f64], rounds: usize, seed: u64) -> CopyStats {
    let n = weights.len();
    let ps = ParticleSet::new(
        weights.iter().enumerate().map(|(i, &w)| Particle { x: i as f64, y: 0.0, theta: 0.0, weight: w }).collect(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
    let mut max_rounding_gap: f64 = 0.0;
    for _ in 0..rounds {
        let out = systematic_resample(&ps, &mut rng);
        assert_eq!(out.len(), n);
        let mut copies = vec![0.0; n];
        for p in out.particles() {
            copies[p.x as usize] += 1.0;
        }
        for i in 0..n {
            max_rounding_gap = max_rounding_gap.max((copies[i] - n as f64 * weights[i]).abs());
            sum[i] += copies[i];
            sum_sq[i] += copies[i] * copies[i];
        }
    }
    let mut max_z: f64 = 0.0;
    for i in 0..n {
        let mean = sum[i] / rounds as f64;
        let sd = (sum_sq[i] / rounds as f64 - mean * mean).max(0.0).sqrt();
        let gap = (mean - n as f64 * weights[i]).abs();
        // A deterministic count (zero spread) must match exactly.
        let z = if sd > 0.0 { gap / (sd / (rounds as f64).sqrt()) } else if gap < 1e-9 { 0.0 } else { f64::INFINITY };
        max_z = max_z.max(z);
    }
    CopyStats { max_rounding_gap, max_z }
}

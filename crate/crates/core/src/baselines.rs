//! Comparison observation models: a beam-end likelihood field and range
//! histograms compared with the 1-D Wasserstein distance.

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::map::{voxel_downsample, VirtualScanGrid};
use crate::mcl::{assign_cells, FilterError, Likelihoods, Observation, ObservationModel, Particle};
use crate::pose::Pose2;
use crate::scan::{PointCloud, RangeImage};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("histograms need at least two bins")]
    TooFewBins,
    #[error("histograms differ in bin count ({0} vs {1})")]
    BinMismatch(usize, usize),
    #[error("histograms cover different ranges")]
    RangeMismatch,
    #[error("parameter must be positive: {0}")]
    NonPositive(&'static str),
    #[error("the map has no points")]
    EmptyMap,
}

const LEAF_SIZE: usize = 8;

/// Exact nearest-neighbour search over a static 3-D point set.
///
/// The tree is implicit: each node is the median element of its index range
/// after partitioning, and `axes` records the split axis of that node.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(mut points: Vec<Point3<f64>>) -> Self {
        let mut axes = vec![0u8; points.len()];
        Self::build(&mut points, &mut axes);
        Self { points, axes }
    }

    fn build(points: &mut [Point3<f64>], axes: &mut [u8]) {
        if points.len() <= LEAF_SIZE {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = points.len() / 2;
        points.select_nth_unstable_by(mid, |p, q| p[axis].total_cmp(&q[axis]));
        axes[mid] = axis as u8;
        let (left, rest) = points.split_at_mut(mid);
        let (left_axes, rest_axes) = axes.split_at_mut(mid);
        Self::build(left, left_axes);
        Self::build(&mut rest[1..], &mut rest_axes[1..]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Squared distance to the nearest point, or `None` for an empty tree.
    pub fn nearest_distance_squared(&self, q: &Point3<f64>) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), q, 0.0, &mut [0.0; 3], &mut best);
        Some(best)
    }

    /// Arya-Mount search: `box_dist` is the squared distance from `q` to the
    /// region of the current node, `offsets` its per-axis components.
    fn search(&self, lo: usize, hi: usize, q: &Point3<f64>, box_dist: f64, offsets: &mut [f64; 3], best: &mut f64) {
        if hi - lo <= LEAF_SIZE {
            for p in &self.points[lo..hi] {
                *best = best.min((p - q).norm_squared());
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        *best = best.min((p - q).norm_squared());
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, box_dist, offsets, best);
        let old = offsets[axis];
        let far_dist = box_dist - old * old + diff * diff;
        if far_dist < *best {
            offsets[axis] = diff;
            self.search(far.0, far.1, q, far_dist, offsets, best);
            offsets[axis] = old;
        }
    }
}

/// Map points indexed for endpoint-to-map distance queries.
#[derive(Debug, Clone)]
pub struct LikelihoodField {
    tree: KdTree,
    pub sigma_hit: f64,
    pub sample_count: usize,
    pub sensor_height: f64,
}

impl LikelihoodField {
    /// Voxelizes `map` at `voxel_size` before indexing.
    pub fn new(
        map: &PointCloud,
        voxel_size: f64,
        sigma_hit: f64,
        sample_count: usize,
        sensor_height: f64,
    ) -> Result<Self, BaselineError> {
        if !(voxel_size > 0.0) {
            return Err(BaselineError::NonPositive("voxel_size"));
        }
        if !(sigma_hit > 0.0) {
            return Err(BaselineError::NonPositive("sigma_hit"));
        }
        if sample_count == 0 {
            return Err(BaselineError::NonPositive("sample_count"));
        }
        if map.is_empty() {
            return Err(BaselineError::EmptyMap);
        }
        Ok(Self {
            tree: KdTree::new(voxel_downsample(map.points(), voxel_size)),
            sigma_hit,
            sample_count,
            sensor_height,
        })
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Squared distance from `q` to the nearest map point.
    pub fn distance_squared(&self, q: &Point3<f64>) -> f64 {
        self.tree.nearest_distance_squared(q).unwrap_or(f64::INFINITY)
    }
}

/// Every `len / count`-th point, or all points when there are few enough.
pub fn subsample(cloud: &PointCloud, count: usize) -> Vec<Point3<f64>> {
    let pts = cloud.points();
    if pts.len() <= count {
        return pts.to_vec();
    }
    (0..count).map(|k| pts[k * pts.len() / count]).collect()
}

fn log_weight_of(samples: &[Point3<f64>], pose: &Pose2, field: &LikelihoodField) -> f64 {
    let iso = pose.to_isometry(field.sensor_height);
    let denom = 2.0 * field.sigma_hit * field.sigma_hit;
    samples
        .iter()
        .map(|p| -field.distance_squared(&(iso * p)) / denom)
        .sum()
}

/// Log of the beam-end likelihood of `query` taken at `pose`.
pub fn beam_end_log_weight(query: &PointCloud, pose: &Pose2, field: &LikelihoodField) -> f64 {
    log_weight_of(&subsample(query, field.sample_count), pose, field)
}

pub fn beam_end_weight(query: &PointCloud, pose: &Pose2, field: &LikelihoodField) -> f64 {
    beam_end_log_weight(query, pose, field).exp()
}

/// Beam-end model: every particle evaluated against the likelihood field.
pub struct BeamEndModel<'f> {
    pub field: &'f LikelihoodField,
}

impl ObservationModel for BeamEndModel<'_> {
    fn log_likelihoods(&self, particles: &[Particle], obs: &Observation<'_>) -> Result<Likelihoods, FilterError> {
        let samples = subsample(obs.cloud, self.field.sample_count);
        let log_likelihood = particles
            .par_iter()
            .map(|p| log_weight_of(&samples, &p.pose(), self.field))
            .collect();
        Ok(Likelihoods { log_likelihood, evaluations: particles.len() })
    }
}

/// Normalized histogram of valid ranges over `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeHistogram {
    pub bins: Vec<f64>,
    pub r_max: f64,
}

impl RangeHistogram {
    pub fn bin_width(&self) -> f64 {
        self.r_max / self.bins.len() as f64
    }
}

/// Histogram of the image's valid ranges in `bins` equal bins. An image
/// without returns gives the uniform histogram.
pub fn range_histogram(img: &RangeImage, bins: usize) -> Result<RangeHistogram, BaselineError> {
    if bins < 2 {
        return Err(BaselineError::TooFewBins);
    }
    let r_max = img.intrinsics().r_max;
    let mut counts = vec![0u64; bins];
    for &r in img.ranges().iter().filter(|r| **r >= 0.0) {
        let b = ((r as f64 / r_max) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let bins = if total == 0 {
        vec![1.0 / bins as f64; bins]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(RangeHistogram { bins, r_max })
}

/// Earth mover's distance between two histograms on the same bins, in meters.
pub fn wasserstein_1d(a: &RangeHistogram, b: &RangeHistogram) -> Result<f64, BaselineError> {
    if a.bins.len() != b.bins.len() {
        return Err(BaselineError::BinMismatch(a.bins.len(), b.bins.len()));
    }
    if a.r_max != b.r_max {
        return Err(BaselineError::RangeMismatch);
    }
    let (mut ca, mut cb, mut sum) = (0.0, 0.0, 0.0);
    for (x, y) in a.bins.iter().zip(&b.bins) {
        ca += x;
        cb += y;
        sum += f64::abs(ca - cb);
    }
    Ok(sum * a.bin_width())
}

/// Similarity `exp(-d / lambda)` of the two scans' range histograms.
pub fn histogram_weight(
    query: &RangeImage,
    map_scan: &RangeImage,
    bins: usize,
    lambda: f64,
) -> Result<f64, BaselineError> {
    if !(lambda > 0.0) {
        return Err(BaselineError::NonPositive("lambda"));
    }
    let d = wasserstein_1d(&range_histogram(query, bins)?, &range_histogram(map_scan, bins)?)?;
    Ok((-d / lambda).exp())
}

/// Histogram model over the virtual-scan grid, memoized per occupied cell
/// like the overlap model. Map histograms are computed once up front.
pub struct HistogramModel<'g> {
    grid: &'g VirtualScanGrid,
    map_histograms: Vec<Option<RangeHistogram>>,
    pub bins: usize,
    pub lambda: f64,
    pub floor: f64,
}

impl<'g> HistogramModel<'g> {
    pub fn new(grid: &'g VirtualScanGrid, bins: usize, lambda: f64, floor: f64) -> Result<Self, BaselineError> {
        if !(lambda > 0.0) {
            return Err(BaselineError::NonPositive("lambda"));
        }
        let map_histograms = (0..grid.cell_count())
            .map(|c| grid.scan(c).map(|s| range_histogram(s, bins)).transpose())
            .collect::<Result<_, _>>()?;
        Ok(Self { grid, map_histograms, bins, lambda, floor })
    }
}

impl ObservationModel for HistogramModel<'_> {
    fn log_likelihoods(&self, particles: &[Particle], obs: &Observation<'_>) -> Result<Likelihoods, FilterError> {
        let query = range_histogram(obs.image, self.bins).expect("bin count validated at construction");
        let assignment = assign_cells(self.grid, particles);
        let log_sim: Vec<f64> = assignment
            .cells
            .iter()
            .map(|&c| {
                let map = self.map_histograms[c].as_ref().expect("assigned cells are occupied");
                -wasserstein_1d(&query, map).expect("same intrinsics") / self.lambda
            })
            .collect();
        let floor = self.floor.ln();
        let log_likelihood = assignment.slot.iter().map(|s| s.map_or(floor, |s| log_sim[s])).collect();
        Ok(Likelihoods { log_likelihood, evaluations: assignment.cells.len() })
    }
}

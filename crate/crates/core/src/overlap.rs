//! Overlap and relative yaw between pairs of range images.
//!
//! [`ground_truth_overlap`] is the pose-given label: the share of pixels of
//! one scan that reproject onto a consistent pixel of the other. The
//! [`GeometricScorer`] estimates overlap and yaw without any pose by sliding
//! the query's columns around the full circle and keeping the best alignment.

use nalgebra::Isometry3;
use thiserror::Error;

use crate::pose::wrap_degrees;
use crate::scan::{RangeImage, SensorIntrinsics};

/// Range agreement threshold used when none is configured, in meters.
pub const DEFAULT_EPS_R: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum OverlapError {
    #[error("range images have different intrinsics")]
    IntrinsicsMismatch,
    #[error("shift {shift} out of range for width {width}")]
    ShiftOutOfRange { shift: usize, width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEstimate {
    /// Fraction in `[0, 1]`.
    pub overlap: f64,
    /// Degrees in `[-180, 180)`. Positive when the query frame is rotated
    /// counter-clockwise (seen from `+z`) relative to the map scan.
    pub yaw_offset: f64,
}

/// Anything that can compare a query scan against a map scan.
///
/// Implementations must be deterministic. A learned model can be plugged in
/// here in place of [`GeometricScorer`].
pub trait ObservationScorer: Send + Sync {
    fn score(&self, query: &RangeImage, map_scan: &RangeImage) -> Result<OverlapEstimate, OverlapError>;
}

impl<S: ObservationScorer + ?Sized> ObservationScorer for &S {
    fn score(&self, query: &RangeImage, map_scan: &RangeImage) -> Result<OverlapEstimate, OverlapError> {
        (**self).score(query, map_scan)
    }
}

/// Exhaustive column-shift matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricScorer {
    pub eps_r: f64,
}

impl Default for GeometricScorer {
    fn default() -> Self {
        Self { eps_r: DEFAULT_EPS_R }
    }
}

impl ObservationScorer for GeometricScorer {
    fn score(&self, query: &RangeImage, map_scan: &RangeImage) -> Result<OverlapEstimate, OverlapError> {
        estimate(query, map_scan, self.eps_r)
    }
}

/// Share of `a`'s valid pixels that, moved by `rel_pose` (frame of `a` to
/// frame of `b`), land on a valid pixel of `b` whose range agrees within
/// `eps_r`. Zero when `a` has no valid pixel.
pub fn ground_truth_overlap(a: &RangeImage, b: &RangeImage, rel_pose: &Isometry3<f64>, eps_r: f64) -> f64 {
    let intr_b = b.intrinsics();
    let mut valid = 0usize;
    let mut hits = 0usize;
    for row in 0..a.height() {
        for col in 0..a.width() {
            let Some(p) = a.point(row, col) else { continue };
            valid += 1;
            let Some((rb, cb, r)) = intr_b.project_point(&(rel_pose * p)) else { continue };
            if let Some(range_b) = b.range(rb, cb) {
                if (r - range_b as f64).abs() <= eps_r {
                    hits += 1;
                }
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        hits as f64 / valid as f64
    }
}

fn check_pair(query: &RangeImage, map_scan: &RangeImage) -> Result<(), OverlapError> {
    if query.intrinsics() != map_scan.intrinsics() {
        return Err(OverlapError::IntrinsicsMismatch);
    }
    Ok(())
}

/// Share of the query's valid pixels that agree with the map scan after
/// shifting the query by `k` columns: query column `(j + k) mod W` is compared
/// with map column `j`.
pub fn shift_score(query: &RangeImage, map_scan: &RangeImage, k: usize, eps_r: f64) -> Result<f64, OverlapError> {
    check_pair(query, map_scan)?;
    let w = query.width();
    if k >= w {
        return Err(OverlapError::ShiftOutOfRange { shift: k, width: w });
    }
    let valid = query.valid_count();
    if valid == 0 {
        return Ok(0.0);
    }
    let aligned = AlignedPair::new(query, map_scan);
    Ok(aligned.count(k, eps_r as f32) as f64 / valid as f64)
}

/// Agreement counts for every shift `k in 0..W`.
pub fn shift_counts(query: &RangeImage, map_scan: &RangeImage, eps_r: f64) -> Result<Vec<u32>, OverlapError> {
    check_pair(query, map_scan)?;
    let aligned = AlignedPair::new(query, map_scan);
    let eps = eps_r as f32;
    Ok((0..query.width()).map(|k| aligned.count(k, eps)).collect())
}

/// Best column alignment: overlap is the maximum shift score, yaw the
/// corresponding shift in degrees. Ties go to the smallest `|yaw|`.
pub fn estimate(query: &RangeImage, map_scan: &RangeImage, eps_r: f64) -> Result<OverlapEstimate, OverlapError> {
    let counts = shift_counts(query, map_scan, eps_r)?;
    let intr = query.intrinsics();
    let valid = query.valid_count();
    let (best_k, best) = best_shift(&counts, intr);
    Ok(OverlapEstimate {
        overlap: if valid == 0 { 0.0 } else { best as f64 / valid as f64 },
        yaw_offset: shift_to_yaw(best_k, intr),
    })
}

#[inline]
pub fn shift_to_yaw(k: usize, intr: &SensorIntrinsics) -> f64 {
    wrap_degrees(k as f64 * intr.column_step_deg())
}

fn best_shift(counts: &[u32], intr: &SensorIntrinsics) -> (usize, u32) {
    let mut best = (0usize, counts[0]);
    for (k, &c) in counts.iter().enumerate().skip(1) {
        let better = c > best.1
            || (c == best.1 && shift_to_yaw(k, intr).abs() < shift_to_yaw(best.0, intr).abs());
        if better {
            best = (k, c);
        }
    }
    best
}

/// Query rows laid out twice back to back and map rows, with invalid pixels
/// as NaN so that a plain `|a - b| <= eps` rejects them.
struct AlignedPair {
    width: usize,
    height: usize,
    query: Vec<f32>,
    map: Vec<f32>,
}

impl AlignedPair {
    fn new(query: &RangeImage, map_scan: &RangeImage) -> Self {
        let (h, w) = (query.height(), query.width());
        let nan = |r: f32| if r >= 0.0 { r } else { f32::NAN };
        let mut q = Vec::with_capacity(2 * h * w);
        for row in query.ranges().chunks_exact(w) {
            q.extend(row.iter().map(|&r| nan(r)));
            q.extend(row.iter().map(|&r| nan(r)));
        }
        let m = map_scan.ranges().iter().map(|&r| nan(r)).collect();
        Self { width: w, height: h, query: q, map: m }
    }

    fn count(&self, k: usize, eps: f32) -> u32 {
        let w = self.width;
        let mut total = 0u32;
        for row in 0..self.height {
            let q = &self.query[2 * row * w + k..2 * row * w + k + w];
            let m = &self.map[row * w..(row + 1) * w];
            total += count_close(q, m, eps);
        }
        total
    }
}

#[inline]
fn count_close(a: &[f32], b: &[f32], eps: f32) -> u32 {
    a.iter().zip(b).map(|(x, y)| ((x - y).abs() <= eps) as u32).sum()
}

//! Point clouds and their spherical projection into range images.
//!
//! A [`RangeImage`] is the `H x W` grid of `(range, normal)` values a LiDAR
//! sweep produces once projected onto the sensor's spherical image plane. Row
//! 0 is the top beam (elevation `+fov_up`), column 0 sits at azimuth `+pi`
//! and columns advance clockwise when viewed from `+z`.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Range value stored for pixels that received no return.
pub const INVALID_RANGE: f32 = -1.0;

const INVALID_NORMAL: [f32; 3] = [0.0; 3];

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("invalid sensor intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("expected {expected} range values, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("range {range} at pixel {index} lies outside [r_min, r_max]")]
    RangeOutOfBounds { index: usize, range: f32 },
}

/// Geometry of a spinning multi-beam LiDAR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorIntrinsics {
    pub height: usize,
    pub width: usize,
    /// Degrees above the horizon covered by the top beam.
    pub fov_up: f64,
    /// Degrees below the horizon covered by the bottom beam.
    pub fov_down: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for SensorIntrinsics {
    /// A 64-beam, 900-column sensor with a symmetric 33.2 degree vertical field of view.
    fn default() -> Self {
        Self {
            height: 64,
            width: 900,
            fov_up: 16.6,
            fov_down: 16.6,
            r_min: 0.3,
            r_max: 75.0,
        }
    }
}

impl SensorIntrinsics {
    pub fn validate(&self) -> Result<(), ScanError> {
        if self.height < 2 {
            return Err(ScanError::InvalidIntrinsics("height must be at least 2"));
        }
        if self.width < 4 {
            return Err(ScanError::InvalidIntrinsics("width must be at least 4"));
        }
        if !(self.fov_up + self.fov_down > 0.0) || !self.fov_up.is_finite() || !self.fov_down.is_finite() {
            return Err(ScanError::InvalidIntrinsics("fov_up + fov_down must be positive"));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(ScanError::InvalidIntrinsics("need 0 <= r_min < r_max"));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Horizontal angular size of one column, in degrees.
    #[inline]
    pub fn column_step_deg(&self) -> f64 {
        360.0 / self.width as f64
    }

    #[inline]
    fn fov_total_rad(&self) -> f64 {
        (self.fov_up + self.fov_down).to_radians()
    }

    #[inline]
    pub fn range_in_bounds(&self, r: f64) -> bool {
        r >= self.r_min && r <= self.r_max
    }

    /// Pixel hit by a point in the sensor frame, together with its range.
    ///
    /// Returns `None` when the range falls outside `[r_min, r_max]`. Row and
    /// column indices are floored and clamped into the image, so points above
    /// or below the vertical field of view land on the border rows.
    #[inline]
    pub fn project_point(&self, p: &Point3<f64>) -> Option<(usize, usize, f64)> {
        let r = p.coords.norm();
        // Ranges are stored as f32; test the value that will be stored.
        if !(r > 0.0) || !self.range_in_bounds(r as f32 as f64) {
            return None;
        }
        let w = self.width as f64;
        let h = self.height as f64;
        let u = 0.5 * (1.0 - p.y.atan2(p.x) / std::f64::consts::PI) * w;
        let elevation = (p.z / r).clamp(-1.0, 1.0).asin();
        let v = (1.0 - (elevation + self.fov_down.to_radians()) / self.fov_total_rad()) * h;
        let col = (u.floor().max(0.0) as usize).min(self.width - 1);
        let row = (v.floor().max(0.0) as usize).min(self.height - 1);
        Some((row, col, r))
    }

    /// Azimuth (radians) of the centre of column `col`.
    #[inline]
    pub fn column_azimuth(&self, col: usize) -> f64 {
        std::f64::consts::PI * (1.0 - 2.0 * (col as f64 + 0.5) / self.width as f64)
    }

    /// Elevation (radians) of the centre of row `row`.
    #[inline]
    pub fn row_elevation(&self, row: usize) -> f64 {
        self.fov_up.to_radians() - (row as f64 + 0.5) / self.height as f64 * self.fov_total_rad()
    }

    /// Unit direction of the central ray through pixel `(row, col)`.
    #[inline]
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let az = self.column_azimuth(col);
        let el = self.row_elevation(row);
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Sensor-frame 3-D points, all coordinates finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self, ScanError> {
        if let Some(index) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(ScanError::NonFinitePoint { index });
        }
        Ok(Self { points })
    }

    /// Build from points the caller already knows to be finite.
    pub(crate) fn from_finite(points: Vec<Point3<f64>>) -> Self {
        debug_assert!(points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())));
        Self { points }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &nalgebra::Isometry3<f64>) -> Self {
        Self::from_finite(self.points.iter().map(|p| pose * p).collect())
    }
}

/// Spherical range image with per-pixel surface normals.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    intrinsics: SensorIntrinsics,
    range: Vec<f32>,
    normal: Vec<[f32; 3]>,
}

impl RangeImage {
    pub fn new_invalid(intrinsics: SensorIntrinsics) -> Self {
        let n = intrinsics.pixel_count();
        Self {
            intrinsics,
            range: vec![INVALID_RANGE; n],
            normal: vec![INVALID_NORMAL; n],
        }
    }

    /// Image from a row-major range plane; normals start out invalid.
    ///
    /// Any negative value is read as "no return". Non-negative values must lie
    /// within the intrinsics' range limits.
    pub fn from_ranges(intrinsics: SensorIntrinsics, ranges: Vec<f32>) -> Result<Self, ScanError> {
        intrinsics.validate()?;
        let expected = intrinsics.pixel_count();
        if ranges.len() != expected {
            return Err(ScanError::SizeMismatch { expected, actual: ranges.len() });
        }
        let mut range = ranges;
        for (index, r) in range.iter_mut().enumerate() {
            if *r < 0.0 {
                *r = INVALID_RANGE;
            } else if !intrinsics.range_in_bounds(*r as f64) {
                return Err(ScanError::RangeOutOfBounds { index, range: *r });
            }
        }
        Ok(Self { intrinsics, normal: vec![INVALID_NORMAL; expected], range })
    }

    /// Image from raw planes, used by the map file reader. Normals whose norm
    /// is zero are treated as invalid.
    pub(crate) fn from_planes(
        intrinsics: SensorIntrinsics,
        range: Vec<f32>,
        normal: Vec<[f32; 3]>,
    ) -> Self {
        debug_assert_eq!(range.len(), intrinsics.pixel_count());
        debug_assert_eq!(normal.len(), intrinsics.pixel_count());
        Self { intrinsics, range, normal }
    }

    #[inline]
    pub fn intrinsics(&self) -> &SensorIntrinsics {
        &self.intrinsics
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    /// Row-major range plane, `INVALID_RANGE` where no return.
    #[inline]
    pub fn ranges(&self) -> &[f32] {
        &self.range
    }

    /// Row-major normal plane, `[0, 0, 0]` where invalid.
    #[inline]
    pub fn normals(&self) -> &[[f32; 3]] {
        &self.normal
    }

    #[inline]
    fn index(&self, row: usize, col: usize) -> usize {
        row * self.intrinsics.width + col
    }

    /// Range at `(row, col)`, or `None` where the pixel holds no return.
    #[inline]
    pub fn range(&self, row: usize, col: usize) -> Option<f32> {
        let r = self.range[self.index(row, col)];
        (r >= 0.0).then_some(r)
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.range[self.index(row, col)] >= 0.0
    }

    pub fn normal(&self, row: usize, col: usize) -> Option<Vector3<f32>> {
        let n = self.normal[self.index(row, col)];
        (n != INVALID_NORMAL).then(|| Vector3::from(n))
    }

    pub fn valid_count(&self) -> usize {
        self.range.iter().filter(|r| **r >= 0.0).count()
    }

    /// Sensor-frame point of a valid pixel.
    pub fn point(&self, row: usize, col: usize) -> Option<Point3<f64>> {
        self.range(row, col)
            .map(|r| Point3::from(self.intrinsics.ray(row, col) * r as f64))
    }

    /// Circularly shift columns to the right by `k`: column `j` of the result
    /// holds column `(j - k) mod W` of `self`.
    ///
    /// Rolling by `k` columns is what a counter-clockwise sensor rotation of
    /// `k * 360 / W` degrees does to a scan of a static scene.
    pub fn roll_columns(&self, k: usize) -> Self {
        let w = self.width();
        let k = k % w;
        let mut out = self.clone();
        for row in 0..self.height() {
            let span = row * w..(row + 1) * w;
            out.range[span.clone()].rotate_right(k);
            out.normal[span].rotate_right(k);
        }
        // Normals are expressed in the sensor frame, so they rotate with it.
        let yaw = (k as f64 * self.intrinsics.column_step_deg()).to_radians();
        let (s, c) = (yaw.sin() as f32, yaw.cos() as f32);
        for n in out.normal.iter_mut().filter(|n| **n != INVALID_NORMAL) {
            *n = [c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]];
        }
        out
    }
}

/// Project a sensor-frame cloud into a range image, keeping the closest
/// return per pixel. Normals of the result are invalid; see
/// [`estimate_normals`].
pub fn spherical_project(cloud: &PointCloud, intrinsics: &SensorIntrinsics) -> RangeImage {
    project_points(cloud.points().iter().copied(), intrinsics)
}

pub(crate) fn project_points(
    points: impl Iterator<Item = Point3<f64>>,
    intrinsics: &SensorIntrinsics,
) -> RangeImage {
    let mut img = RangeImage::new_invalid(*intrinsics);
    let w = intrinsics.width;
    for p in points {
        if let Some((row, col, r)) = intrinsics.project_point(&p) {
            let r = r as f32;
            let slot = &mut img.range[row * w + col];
            if *slot < 0.0 || r < *slot {
                *slot = r;
            }
        }
    }
    img
}

/// Per-pixel normals from the cross product of the right and down neighbour
/// offsets, oriented towards the sensor. Pixels in the last row or column, or
/// with an invalid neighbour, get an invalid normal.
pub fn estimate_normals(img: &RangeImage) -> RangeImage {
    let mut out = img.clone();
    let (h, w) = (img.height(), img.width());
    out.normal.fill(INVALID_NORMAL);
    for row in 0..h.saturating_sub(1) {
        for col in 0..w - 1 {
            let (Some(p), Some(right), Some(down)) = (
                img.point(row, col),
                img.point(row, col + 1),
                img.point(row + 1, col),
            ) else {
                continue;
            };
            let n = (right - p).cross(&(down - p));
            let norm = n.norm();
            if !(norm > f64::EPSILON * p.coords.norm_squared()) {
                continue;
            }
            let mut n = n / norm;
            if n.dot(&p.coords) > 0.0 {
                n = -n;
            }
            out.normal[row * w + col] = [n.x as f32, n.y as f32, n.z as f32];
        }
    }
    out
}

/// One point per valid pixel, along the pixel's central ray.
pub fn unproject(img: &RangeImage) -> PointCloud {
    let mut points = Vec::with_capacity(img.valid_count());
    for row in 0..img.height() {
        for col in 0..img.width() {
            if let Some(p) = img.point(row, col) {
                points.push(p);
            }
        }
    }
    PointCloud::from_finite(points)
}

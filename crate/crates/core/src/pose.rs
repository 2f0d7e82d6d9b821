//! Planar poses and angle helpers.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Point2, Vector3};
use serde::{Deserialize, Serialize};

/// Wrap an angle in radians to `[-pi, pi)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Wrap an angle in degrees to `[-180, 180)`.
#[inline]
pub fn wrap_degrees(a: f64) -> f64 {
    if (-180.0..180.0).contains(&a) {
        return a;
    }
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Vehicle pose in the map plane; `theta` in radians, counter-clockwise from `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }

    /// `self * delta`, with `delta` expressed in this pose's frame.
    pub fn compose(&self, dx: f64, dy: f64, dtheta: f64) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.theta + dtheta)
    }

    /// Motion `(dx, dy, dtheta)` taking `self` to `other`, in `self`'s frame.
    pub fn between(&self, other: &Pose2) -> (f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (ex, ey) = (other.x - self.x, other.y - self.y);
        (c * ex + s * ey, -s * ex + c * ey, wrap_angle(other.theta - self.theta))
    }

    /// Sensor pose in 3-D, mounted `height` above the ground plane.
    pub fn to_isometry(&self, height: f64) -> Isometry3<f64> {
        Isometry3::new(Vector3::new(self.x, self.y, height), Vector3::new(0.0, 0.0, self.theta))
    }

    /// Planar part of a 3-D pose (translation x/y and yaw).
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (_, _, yaw) = iso.rotation.euler_angles();
        Self::new(iso.translation.x, iso.translation.y, yaw)
    }
}

/// Axis-aligned rectangle in the map plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds2 {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds2 {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn is_valid(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y].iter().all(|v| v.is_finite())
            && self.max_x > self.min_x
            && self.max_y > self.min_y
    }
}

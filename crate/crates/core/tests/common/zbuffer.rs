//! Exhaustive per-pixel z-buffer oracle for spherical projection.

use nalgebra::Point3;
use overlap_loc::scan::SensorIntrinsics;
use rand::Rng;

/// Pixel of a point, written out from the projection formulas.
pub fn oracle_pixel(p: &Point3<f64>, intr: &SensorIntrinsics) -> Option<(usize, usize, f32)> {
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    let stored = r as f32;
    if !(stored as f64 >= intr.r_min && stored as f64 <= intr.r_max) || r == 0.0 {
        return None;
    }
    let pi = std::f64::consts::PI;
    let u = 0.5 * (1.0 - p.y.atan2(p.x) / pi) * intr.width as f64;
    let pitch = (p.z / r).clamp(-1.0, 1.0).asin();
    let total = (intr.fov_up + intr.fov_down).to_radians();
    let v = (1.0 - (pitch + intr.fov_down.to_radians()) / total) * intr.height as f64;
    let clamp = |x: f64, n: usize| (x.floor().max(0.0) as usize).min(n - 1);
    Some((clamp(v, intr.height), clamp(u, intr.width), stored))
}

/// Exhaustive z-buffer: every pixel takes the minimum over all points that
/// map to it.
pub fn oracle_image(points: &[Point3<f64>], intr: &SensorIntrinsics) -> Vec<f32> {
    let projected: Vec<_> = points.iter().filter_map(|p| oracle_pixel(p, intr)).collect();
    let mut out = vec![-1.0f32; intr.height * intr.width];
    for row in 0..intr.height {
        for col in 0..intr.width {
            out[row * intr.width + col] = projected
                .iter()
                .filter(|(r, c, _)| *r == row && *c == col)
                .map(|t| t.2)
                .fold(-1.0f32, |m, x| if m < 0.0 || x < m { x } else { m });
        }
    }
    out
}

/// Points at random ranges and directions, some outside the field of view
/// and the range limits.
pub fn random_cloud<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3<f64>> {
    (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.1..70.0);
            let az: f64 = rng.random_range(-3.2..3.2);
            let el: f64 = rng.random_range(-0.6..0.4);
            Point3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
        })
        .collect()
}

/// The same z-buffer filled point by point: each point overwrites its
/// pixel when nearer. Linear in the cloud size, for large clouds.
pub fn oracle_image_per_point(points: &[Point3<f64>], intr: &SensorIntrinsics) -> Vec<f32> {
    let mut out = vec![-1.0f32; intr.height * intr.width];
    for (row, col, r) in points.iter().filter_map(|p| oracle_pixel(p, intr)) {
        let px = &mut out[row * intr.width + col];
        if *px < 0.0 || r < *px {
            *px = r;
        }
    }
    out
}

//! Synthetic urban-block worlds and an exact LiDAR / odometry simulator.
//!
//! The world is a ground plane at `z = 0` plus axis-aligned boxes (buildings
//! and parked cars). Rays are intersected analytically, so every simulated
//! range is exact up to `f32` storage.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::mcl::OdometryControl;
use crate::pose::{Bounds2, Pose2};
use crate::scan::{estimate_normals, unproject, RangeImage, SensorIntrinsics};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("waypoint {index} ({x}, {y}) lies outside the world bounds")]
    WaypointOutOfBounds { index: usize, x: f64, y: f64 },
    #[error("trajectory needs at least two distinct waypoints")]
    TooFewWaypoints,
    #[error("trajectory speed must be positive")]
    BadSpeed,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(IoError::Io(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxKind {
    Building,
    /// Small movable object (parked car). Only these are touched by
    /// [`perturb_world`].
    Car,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub kind: BoxKind,
}

impl WorldBox {
    pub fn min(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] - self.half_extents[i])
    }

    pub fn max(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] + self.half_extents[i])
    }

    /// Largest per-axis signed distance to the faces; zero on the surface.
    pub fn surface_residual(&self, p: &Point3<f64>) -> f64 {
        (0..3)
            .map(|i| (p[i] - self.center[i]).abs() - self.half_extents[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Entry distance along a ray, or the exit distance when the origin is
    /// inside the box.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (lo, hi) = (self.min(), self.max());
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < lo[i] || origin[i] > hi[i] {
                    return None;
                }
                continue;
            }
            let t1 = (lo[i] - origin[i]) / dir[i];
            let t2 = (hi[i] - origin[i]) / dir[i];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        if t_near > t_far || t_far <= 0.0 {
            return None;
        }
        Some(if t_near > 0.0 { t_near } else { t_far })
    }
}

/// A straight road between two points, used for trajectories and parking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub half_width: f64,
}

impl Road {
    fn length(&self) -> f64 {
        (self.to[0] - self.from[0]).hypot(self.to[1] - self.from[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub bounds: Bounds2,
    pub boxes: Vec<WorldBox>,
    #[serde(default)]
    pub roads: Vec<Road>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Ground,
    Box(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub primitive: Primitive,
}

impl WorldModel {
    pub fn new(bounds: Bounds2, boxes: Vec<WorldBox>) -> Result<Self, SimError> {
        let world = Self { bounds, boxes, roads: Vec::new() };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.bounds.is_valid() {
            return Err(SimError::InvalidWorld("degenerate bounds".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.half_extents.iter().any(|e| !(*e > 0.0)) {
                return Err(SimError::InvalidWorld(format!("box {i} has non-positive extent")));
            }
            let (lo, hi) = (b.min(), b.max());
            if !self.bounds.contains(lo[0], lo[1]) || !self.bounds.contains(hi[0], hi[1]) {
                return Err(SimError::InvalidWorld(format!("box {i} leaves the world bounds")));
            }
        }
        Ok(())
    }

    pub fn ground_only(bounds: Bounds2) -> Self {
        Self { bounds, boxes: Vec::new(), roads: Vec::new() }
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, SimError> {
        let world: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        world.validate()?;
        Ok(world)
    }

    /// Nearest positive intersection with the ground plane or any box.
    pub fn cast_ray(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        self.cast_ray_among(origin, dir, 0..self.boxes.len())
    }

    fn cast_ray_among(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        candidates: impl IntoIterator<Item = usize>,
    ) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        if dir.z < 0.0 && origin.z > 0.0 {
            best = Some(RayHit { range: -origin.z / dir.z, primitive: Primitive::Ground });
        }
        for i in candidates {
            if let Some(t) = self.boxes[i].intersect(origin, dir) {
                if best.is_none_or(|b| t < b.range) {
                    best = Some(RayHit { range: t, primitive: Primitive::Box(i) });
                }
            }
        }
        best
    }

    /// Implicit-surface residual of a point against one primitive.
    pub fn surface_residual(&self, primitive: Primitive, p: &Point3<f64>) -> f64 {
        match primitive {
            Primitive::Ground => p.z,
            Primitive::Box(i) => self.boxes[i].surface_residual(p),
        }
    }
}

/// Analytic scan from `pose`, sensor mounted `sensor_height` above ground.
/// Returns beyond `[r_min, r_max]` leave the pixel invalid.
pub fn simulate_scan(
    world: &WorldModel,
    pose: &Pose2,
    intr: &SensorIntrinsics,
    sensor_height: f64,
) -> RangeImage {
    let origin = Point3::new(pose.x, pose.y, sensor_height);
    // Boxes whose footprint is out of reach can be skipped.
    let candidates: Vec<usize> = world
        .boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let dx = ((pose.x - b.center[0]).abs() - b.half_extents[0]).max(0.0);
            let dy = ((pose.y - b.center[1]).abs() - b.half_extents[1]).max(0.0);
            dx.hypot(dy) <= intr.r_max
        })
        .map(|(i, _)| i)
        .collect();
    let (s, c) = pose.theta.sin_cos();
    let mut ranges = vec![-1.0f32; intr.pixel_count()];
    for row in 0..intr.height {
        for col in 0..intr.width {
            let d = intr.ray(row, col);
            let dir = Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z);
            if let Some(hit) = world.cast_ray_among(&origin, &dir, candidates.iter().copied()) {
                // checked after f32 rounding, which is what gets stored
                if intr.range_in_bounds(hit.range as f32 as f64) {
                    ranges[row * intr.width + col] = hit.range as f32;
                }
            }
        }
    }
    let img = RangeImage::from_ranges(*intr, ranges).expect("simulated ranges are within bounds");
    estimate_normals(&img)
}

/// Standard deviations of the per-step odometry error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryNoise {
    /// Meters, applied independently to the forward and lateral motion.
    pub trans_sigma: f64,
    /// Radians, applied to the heading change.
    pub rot_sigma: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self { trans_sigma: 0.02, rot_sigma: 0.2f64.to_radians() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 2]>,
    /// Meters travelled per scan.
    pub speed: f64,
    pub steps: usize,
    /// Drive back to the first waypoint and keep looping.
    pub closed: bool,
    pub noise: OdometryNoise,
    pub seed: u64,
}

impl TrajectorySpec {
    /// True poses at each step; heading follows the current segment.
    pub fn poses(&self, world: &WorldModel) -> Result<Vec<Pose2>, SimError> {
        for (index, w) in self.waypoints.iter().enumerate() {
            if !world.bounds.contains(w[0], w[1]) {
                return Err(SimError::WaypointOutOfBounds { index, x: w[0], y: w[1] });
            }
        }
        if !(self.speed > 0.0) {
            return Err(SimError::BadSpeed);
        }
        let mut pts = self.waypoints.clone();
        if self.closed {
            pts.push(pts[0]);
        }
        let segments: Vec<([f64; 2], [f64; 2], f64)> = pts
            .windows(2)
            .map(|w| (w[0], w[1], (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])))
            .filter(|s| s.2 > 0.0)
            .collect();
        if segments.is_empty() {
            return Err(SimError::TooFewWaypoints);
        }
        let total: f64 = segments.iter().map(|s| s.2).sum();
        let mut poses = Vec::with_capacity(self.steps);
        for step in 0..self.steps {
            let mut s = step as f64 * self.speed;
            if self.closed {
                s = s.rem_euclid(total);
            }
            s = s.min(total);
            let mut idx = 0;
            while idx + 1 < segments.len() && s >= segments[idx].2 {
                s -= segments[idx].2;
                idx += 1;
            }
            let (a, b, len) = segments[idx];
            let f = (s / len).min(1.0);
            let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
            poses.push(Pose2::new(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), theta));
        }
        Ok(poses)
    }
}

/// A simulated drive: scans, true poses and noisy odometry. `odometry[i]`
/// is the measured motion from step `i - 1` to `i`; `odometry[0]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scans: Vec<RangeImage>,
    pub poses: Vec<Pose2>,
    pub odometry: Vec<OdometryControl>,
    pub sensor_height: f64,
}

pub fn generate_dataset(
    world: &WorldModel,
    traj: &TrajectorySpec,
    intr: &SensorIntrinsics,
    sensor_height: f64,
) -> Result<Dataset, SimError> {
    let poses = traj.poses(world)?;
    let odometry = noisy_odometry(&poses, &traj.noise, traj.seed);
    let scans = poses.iter().map(|p| simulate_scan(world, p, intr, sensor_height)).collect();
    Ok(Dataset { scans, poses, odometry, sensor_height })
}

pub fn noisy_odometry(poses: &[Pose2], noise: &OdometryNoise, seed: u64) -> Vec<OdometryControl> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trans = Normal::new(0.0, noise.trans_sigma.max(0.0)).unwrap();
    let rot = Normal::new(0.0, noise.rot_sigma.max(0.0)).unwrap();
    let mut out = Vec::with_capacity(poses.len());
    if !poses.is_empty() {
        out.push(OdometryControl::default());
    }
    for w in poses.windows(2) {
        let (dx, dy, dtheta) = w[0].between(&w[1]);
        out.push(OdometryControl {
            dx: dx + trans.sample(&mut rng),
            dy: dy + trans.sample(&mut rng),
            dtheta: dtheta + rot.sample(&mut rng),
        });
    }
    out
}

/// Dead-reckoned poses from a start pose and odometry.
pub fn integrate_odometry(start: Pose2, odometry: &[OdometryControl]) -> Vec<Pose2> {
    let mut pose = start;
    odometry
        .iter()
        .enumerate()
        .map(|(i, u)| {
            if i > 0 {
                pose = pose.compose(u.dx, u.dy, u.dtheta);
            }
            pose
        })
        .collect()
}

impl Dataset {
    /// Writes `scans/NNNNNN.bin`, `poses.txt` (ground truth, sensor frame
    /// at `sensor_height`) and `odometry.txt` (`dx dy dtheta` per scan).
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        let scan_dir = dir.join("scans");
        fs::create_dir_all(&scan_dir)?;
        for (i, scan) in self.scans.iter().enumerate() {
            io::write_point_cloud(&scan_dir.join(io::scan_file_name(i)), &unproject(scan))?;
        }
        let poses: Vec<_> = self.poses.iter().map(|p| p.to_isometry(self.sensor_height)).collect();
        io::write_poses(&dir.join("poses.txt"), &poses)?;
        write_odometry(&dir.join("odometry.txt"), &self.odometry)?;
        Ok(())
    }
}

pub fn write_odometry(path: &Path, odometry: &[OdometryControl]) -> Result<(), SimError> {
    let text: String = odometry
        .iter()
        .map(|u| format!("{:e} {:e} {:e}\n", u.dx, u.dy, u.dtheta))
        .collect();
    fs::write(path, text)?;
    Ok(())
}

pub fn read_odometry(path: &Path) -> Result<Vec<OdometryControl>, SimError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| IoError::Parse { path: path.into(), line: n + 1, msg };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 3 || !v.iter().all(|x| x.is_finite()) {
            return Err(parse_err("expected 3 finite values".into()).into());
        }
        out.push(OdometryControl { dx: v[0], dy: v[1], dtheta: v[2] });
    }
    Ok(out)
}

/// Remove, move or replace a `fraction` of the cars. Buildings stay put.
pub fn perturb_world(world: &WorldModel, fraction: f64, seed: u64) -> WorldModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cars: Vec<usize> = (0..world.boxes.len()).filter(|&i| world.boxes[i].kind == BoxKind::Car).collect();
    let count = ((fraction.clamp(0.0, 1.0) * cars.len() as f64).round() as usize).min(cars.len());
    let mut chosen: Vec<usize> = sample(&mut rng, cars.len(), count).into_iter().map(|i| cars[i]).collect();
    chosen.sort_unstable();

    let mut boxes = Vec::with_capacity(world.boxes.len());
    let mut added = Vec::new();
    for (i, b) in world.boxes.iter().enumerate() {
        if chosen.binary_search(&i).is_err() {
            boxes.push(*b);
            continue;
        }
        match rng.random_range(0..3) {
            // removed
            0 => {}
            // moved: same car, new spot
            1 => boxes.push(relocated_car(world, b, &mut rng)),
            // replaced: this one leaves, a different car arrives elsewhere
            _ => {
                let mut fresh = relocated_car(world, b, &mut rng);
                fresh.half_extents[0] = rng.random_range(1.8..2.6);
                added.push(fresh);
            }
        }
    }
    boxes.extend(added);
    WorldModel { bounds: world.bounds, boxes, roads: world.roads.clone() }
}

fn relocated_car(world: &WorldModel, old: &WorldBox, rng: &mut ChaCha8Rng) -> WorldBox {
    loop {
        let candidate = match parking_spot(world, rng) {
            Some(c) => c,
            None => {
                let hx = old.half_extents[0].max(old.half_extents[1]);
                let b = &world.bounds;
                let cx = rng.random_range(b.min_x + hx..b.max_x - hx);
                let cy = rng.random_range(b.min_y + hx..b.max_y - hx);
                WorldBox { center: [cx, cy, old.center[2]], ..*old }
            }
        };
        let moved = (candidate.center[0] - old.center[0]).hypot(candidate.center[1] - old.center[1]);
        if moved > 1.0 {
            return candidate;
        }
    }
}

/// A car-sized box at the kerb of a random road, away from intersections
/// and other cars. `None` when no free spot turns up.
fn parking_spot(world: &WorldModel, rng: &mut ChaCha8Rng) -> Option<WorldBox> {
    if world.roads.is_empty() {
        return None;
    }
    let total: f64 = world.roads.iter().map(Road::length).sum();
    for _ in 0..10_000 {
        let mut s = rng.random_range(0.0..total);
        let road = world
            .roads
            .iter()
            .find(|r| {
                let hit = s < r.length();
                if !hit {
                    s -= r.length();
                }
                hit
            })
            .unwrap_or(&world.roads[0]);
        let len = road.length();
        let margin = road.half_width + 6.0;
        if len <= 2.0 * margin || s < margin || s > len - margin {
            continue;
        }
        let (ux, uy) = ((road.to[0] - road.from[0]) / len, (road.to[1] - road.from[1]) / len);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let offset = side * (road.half_width - 1.5);
        let cx = road.from[0] + ux * s - uy * offset;
        let cy = road.from[1] + uy * s + ux * offset;
        let in_crossing = world.roads.iter().any(|r| {
            !std::ptr::eq(r, road) && distance_to_segment(r, cx, cy) < r.half_width + 4.0
        });
        if in_crossing {
            continue;
        }
        let (hl, hw) = (rng.random_range(2.0..2.5), 0.9);
        let half = if ux.abs() > uy.abs() { [hl, hw, 0.75] } else { [hw, hl, 0.75] };
        let gap = 0.5;
        let blocked = world.boxes.iter().filter(|b| b.kind == BoxKind::Car).any(|b| {
            (0..2).all(|a| ([cx, cy][a] - b.center[a]).abs() < half[a] + b.half_extents[a] + gap)
        });
        if !blocked {
            return Some(WorldBox { center: [cx, cy, 0.75], half_extents: half, kind: BoxKind::Car });
        }
    }
    None
}

fn distance_to_segment(road: &Road, x: f64, y: f64) -> f64 {
    let (ax, ay) = (road.from[0], road.from[1]);
    let (dx, dy) = (road.to[0] - ax, road.to[1] - ay);
    let t = (((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (x - ax - t * dx).hypot(y - ay - t * dy)
}

/// Layout parameters of the generated urban-block world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanConfig {
    pub size: f64,
    /// x coordinates of the north-south roads.
    pub avenues: Vec<f64>,
    /// y coordinates of the east-west roads.
    pub streets: Vec<f64>,
    pub road_half_width: f64,
    pub cars: usize,
}

impl Default for UrbanConfig {
    /// 200 m x 200 m with three avenues and two streets, i.e. two road loops.
    fn default() -> Self {
        Self {
            size: 200.0,
            avenues: vec![20.0, 100.0, 180.0],
            streets: vec![20.0, 180.0],
            road_half_width: 6.0,
            cars: 30,
        }
    }
}

impl WorldModel {
    /// Blocks of buildings of random size lining a grid of roads, plus cars
    /// parked at the kerbs.
    pub fn urban(cfg: &UrbanConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bounds = Bounds2::new(0.0, 0.0, cfg.size, cfg.size);
        let (amin, amax) = (cfg.avenues[0], *cfg.avenues.last().unwrap());
        let (smin, smax) = (cfg.streets[0], *cfg.streets.last().unwrap());
        let mut roads = Vec::new();
        for &x in &cfg.avenues {
            roads.push(Road { from: [x, smin], to: [x, smax], half_width: cfg.road_half_width });
        }
        for &y in &cfg.streets {
            roads.push(Road { from: [amin, y], to: [amax, y], half_width: cfg.road_half_width });
        }

        let hw = cfg.road_half_width;
        let mut boxes = Vec::new();
        // Blocks enclosed by consecutive avenues and streets.
        for ax in cfg.avenues.windows(2) {
            for sy in cfg.streets.windows(2) {
                let block = Bounds2::new(ax[0] + hw, sy[0] + hw, ax[1] - hw, sy[1] - hw);
                line_block(&block, &mut rng, &mut boxes);
            }
        }
        // Sparser row of buildings facing the outer roads.
        let outer = [
            (Bounds2::new(1.0, 1.0, cfg.size - 1.0, smin - hw), 2usize),
            (Bounds2::new(1.0, smax + hw, cfg.size - 1.0, cfg.size - 1.0), 0),
            (Bounds2::new(1.0, smin - hw + 1.0, amin - hw, smax + hw - 1.0), 1),
            (Bounds2::new(amax + hw, smin - hw + 1.0, cfg.size - 1.0, smax + hw - 1.0), 3),
        ];
        for (strip, side) in outer {
            let depth = if side % 2 == 0 { strip.height() } else { strip.width() };
            line_side(&strip, side, depth, 18.0..34.0, 6.0..18.0, &mut rng, &mut boxes);
        }

        let mut world = Self { bounds, boxes, roads };
        for _ in 0..cfg.cars {
            if let Some(car) = parking_spot(&world, &mut rng) {
                world.boxes.push(car);
            }
        }
        world
    }
}

/// Buildings along all four sides of a block, facing outward.
fn line_block(block: &Bounds2, rng: &mut ChaCha8Rng, out: &mut Vec<WorldBox>) {
    for side in 0..4 {
        let depth = if side % 2 == 0 { block.height() } else { block.width() } / 2.0;
        line_side(block, side, depth, 12.0..26.0, 3.0..10.0, rng, out);
    }
}

/// Buildings along one side of `area`, at most `max_depth` deep. Sides:
/// 0 = south, 1 = east, 2 = north, 3 = west.
fn line_side(
    area: &Bounds2,
    side: usize,
    max_depth: f64,
    frontage: std::ops::Range<f64>,
    gap: std::ops::Range<f64>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<WorldBox>,
) {
    let along_x = side.is_multiple_of(2);
    // The north/south rows own the block corners.
    let corner = if along_x { 0.0 } else { 26.0f64.min(area.height() / 3.0) };
    let (start, end) = if along_x {
        (area.min_x, area.max_x)
    } else {
        (area.min_y + corner, area.max_y - corner)
    };
    let mut s = start + rng.random_range(2.0..5.0);
    loop {
        let len = rng.random_range(frontage.clone());
        if s + len > end - 2.0 {
            break;
        }
        let setback = rng.random_range(1.0..4.0);
        let depth = rng.random_range(10.0..20.0f64).min(max_depth - setback - 0.5);
        let height = rng.random_range(6.0..28.0);
        if depth > 2.0 {
            let mid = s + len / 2.0;
            let (cx, cy, hx, hy) = match side {
                0 => (mid, area.min_y + setback + depth / 2.0, len / 2.0, depth / 2.0),
                2 => (mid, area.max_y - setback - depth / 2.0, len / 2.0, depth / 2.0),
                1 => (area.max_x - setback - depth / 2.0, mid, depth / 2.0, len / 2.0),
                _ => (area.min_x + setback + depth / 2.0, mid, depth / 2.0, len / 2.0),
            };
            out.push(WorldBox {
                center: [cx, cy, height / 2.0],
                half_extents: [hx, hy, height / 2.0],
                kind: BoxKind::Building,
            });
        }
        s += len + rng.random_range(gap.clone());
    }
}

/// Closed figure-eight tour over every road: around the outer-right loop,
/// down the middle avenue, around the left loop and back down the middle.
pub fn loop_waypoints(cfg: &UrbanConfig) -> Vec<[f64; 2]> {
    let (s0, s1) = (cfg.streets[0], *cfg.streets.last().unwrap());
    let a = &cfg.avenues;
    let (a0, mid, an) = (a[0], a[a.len() / 2], *a.last().unwrap());
    vec![
        [mid, s0],
        [an, s0],
        [an, s1],
        [mid, s1],
        [mid, s0],
        [a0, s0],
        [a0, s1],
        [mid, s1],
    ]
}

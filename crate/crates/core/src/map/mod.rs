//! Grid of virtual scans rendered from an aggregated map cloud.
//!
//! Every grid cell whose neighbourhood holds map points gets a virtual range
//! image rendered at the cell centre, `sensor_height` above ground and facing
//! yaw 0. Cells whose rendering has too few returns are left unoccupied.

mod format;

use std::collections::HashSet;

use nalgebra::{Isometry3, Point3};
use rayon::prelude::*;
use thiserror::Error;

pub use format::{decode_grid, encode_grid, load_grid, save_grid, MAGIC, VERSION};

use crate::pose::Bounds2;
use crate::scan::{estimate_normals, project_points, PointCloud, RangeImage, SensorIntrinsics};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("got {scans} scans but {poses} poses")]
    CountMismatch { scans: usize, poses: usize },
    #[error("voxel size and grid resolution must be positive")]
    BadResolution,
    #[error("map cloud is empty")]
    EmptyCloud,
    #[error("no map points fall inside the grid bounds")]
    NoPointsInBounds,
    #[error("invalid grid bounds")]
    BadBounds,
    #[error(transparent)]
    Scan(#[from] crate::scan::ScanError),
    #[error("not a virtual scan grid file (bad magic)")]
    BadMagic,
    #[error("unsupported grid file version {0}")]
    UnsupportedVersion(u32),
    #[error("grid file truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("corrupt grid file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Map-frame points with at most one point per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCloud {
    pub points: PointCloud,
    pub voxel_size: f64,
}

#[inline]
fn voxel_key(p: &Point3<f64>, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Keeps the first point seen in each voxel, preserving input order.
pub fn voxel_downsample<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>, voxel_size: f64) -> Vec<Point3<f64>> {
    let mut seen = HashSet::new();
    points
        .into_iter()
        .filter(|p| seen.insert(voxel_key(p, voxel_size)))
        .copied()
        .collect()
}

/// Transform scans into the map frame and merge them voxel by voxel.
pub fn aggregate(
    scans: &[PointCloud],
    poses: &[Isometry3<f64>],
    voxel_size: f64,
) -> Result<AggregatedCloud, MapError> {
    if scans.len() != poses.len() {
        return Err(MapError::CountMismatch { scans: scans.len(), poses: poses.len() });
    }
    if !(voxel_size > 0.0) {
        return Err(MapError::BadResolution);
    }
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for (scan, pose) in scans.iter().zip(poses) {
        for p in scan.points() {
            let q = pose * p;
            if seen.insert(voxel_key(&q, voxel_size)) {
                points.push(q);
            }
        }
    }
    Ok(AggregatedCloud { points: PointCloud::from_finite(points), voxel_size })
}

impl AggregatedCloud {
    /// Coarser copy of the cloud, e.g. for faster virtual-scan rendering.
    pub fn downsampled(&self, voxel_size: f64) -> Self {
        Self {
            points: PointCloud::from_finite(voxel_downsample(self.points.points(), voxel_size)),
            voxel_size,
        }
    }
}

/// Virtual scan of `cloud` from `(x, y, sensor_height)` facing yaw 0.
pub fn render_virtual_scan(
    cloud: &AggregatedCloud,
    x: f64,
    y: f64,
    sensor_height: f64,
    intrinsics: &SensorIntrinsics,
) -> RangeImage {
    let shifted = cloud.points.points().iter().map(|p| Point3::new(p.x - x, p.y - y, p.z - sensor_height));
    estimate_normals(&project_points(shifted, intrinsics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    /// Cell size in meters.
    pub resolution: f64,
    pub bounds: Bounds2,
    pub sensor_height: f64,
    pub intrinsics: SensorIntrinsics,
    /// A rendered cell is occupied iff its scan has at least this many returns.
    pub min_valid_pixels: usize,
    /// A cell is rendered iff a map point lies within this horizontal distance
    /// of its centre. Defaults to the resolution.
    pub candidate_radius: Option<f64>,
    /// When set, only cells whose centre lies within `path_radius` of one of
    /// these positions are rendered, e.g. the poses of the mapping drive.
    pub path: Option<Vec<[f64; 2]>>,
    pub path_radius: f64,
    /// Level-of-detail rendering for [`build_grid`]: points near the sensor
    /// come from the cloud voxelized at this size, farther points from
    /// coarser copies whose voxels stay below the pixel footprint. `None`
    /// renders the full cloud.
    pub render_voxel: Option<f64>,
}

impl GridParams {
    pub fn new(resolution: f64, bounds: Bounds2) -> Self {
        Self {
            resolution,
            bounds,
            sensor_height: 1.7,
            intrinsics: SensorIntrinsics::default(),
            min_valid_pixels: 100,
            candidate_radius: None,
            path: None,
            path_radius: 8.0,
            render_voxel: None,
        }
    }
}

/// Virtual scans on a regular grid. Cell `(ix, iy)` has index `iy * nx + ix`
/// and covers `origin + [ix, ix + 1) * resolution` in x (likewise y).
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualScanGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub sensor_height: f64,
    pub nx: usize,
    pub ny: usize,
    pub intrinsics: SensorIntrinsics,
    cells: Vec<Option<RangeImage>>,
}

impl VirtualScanGrid {
    pub fn new(
        origin: [f64; 2],
        resolution: f64,
        sensor_height: f64,
        (nx, ny): (usize, usize),
        intrinsics: SensorIntrinsics,
    ) -> Self {
        Self {
            origin,
            resolution,
            sensor_height,
            nx,
            ny,
            intrinsics,
            cells: vec![None; nx * ny],
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some(fy as usize * self.nx + fx as usize)
    }

    /// Centre of a cell.
    pub fn cell_to_world(&self, index: usize) -> (f64, f64) {
        let (ix, iy) = (index % self.nx, index / self.nx);
        (
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn scan(&self, index: usize) -> Option<&RangeImage> {
        self.cells.get(index).and_then(Option::as_ref)
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.scan(index).is_some()
    }

    pub fn occupied_indices(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i].is_some()).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Store a virtual scan. Panics if the scan's intrinsics differ from the
    /// grid's.
    pub fn set_scan(&mut self, index: usize, scan: Option<RangeImage>) {
        if let Some(s) = &scan {
            assert_eq!(s.intrinsics(), &self.intrinsics, "virtual scan intrinsics differ from the grid");
        }
        self.cells[index] = scan;
    }

    pub fn bounds(&self) -> Bounds2 {
        Bounds2::new(
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.nx as f64 * self.resolution,
            self.origin[1] + self.ny as f64 * self.resolution,
        )
    }
}

/// Number of cells needed to cover `extent`, tolerant of rounding in
/// `extent / resolution`.
fn cells_along(extent: f64, resolution: f64) -> usize {
    ((extent / resolution) - 1e-9).ceil().max(1.0) as usize
}

fn empty_grid(params: &GridParams) -> Result<VirtualScanGrid, MapError> {
    if !(params.resolution > 0.0) {
        return Err(MapError::BadResolution);
    }
    if !params.bounds.is_valid() {
        return Err(MapError::BadBounds);
    }
    params.intrinsics.validate()?;
    let b = &params.bounds;
    Ok(VirtualScanGrid::new(
        [b.min_x, b.min_y],
        params.resolution,
        params.sensor_height,
        (cells_along(b.width(), params.resolution), cells_along(b.height(), params.resolution)),
        params.intrinsics,
    ))
}

/// Indices of the cells [`build_grid`] renders.
pub fn candidate_cells(cloud: &AggregatedCloud, params: &GridParams) -> Result<Vec<usize>, MapError> {
    let grid = empty_grid(params)?;
    if cloud.points.is_empty() {
        return Err(MapError::EmptyCloud);
    }
    let radius = params.candidate_radius.unwrap_or(params.resolution);
    let r2 = radius * radius;
    let span = (radius / grid.resolution).ceil() as i64 + 1;
    let mut marked = vec![false; grid.cell_count()];
    for p in cloud.points.points() {
        let cx = ((p.x - grid.origin[0]) / grid.resolution).floor() as i64;
        let cy = ((p.y - grid.origin[1]) / grid.resolution).floor() as i64;
        for iy in (cy - span).max(0)..=(cy + span).min(grid.ny as i64 - 1) {
            for ix in (cx - span).max(0)..=(cx + span).min(grid.nx as i64 - 1) {
                let index = iy as usize * grid.nx + ix as usize;
                if marked[index] {
                    continue;
                }
                let (x, y) = grid.cell_to_world(index);
                if (p.x - x).powi(2) + (p.y - y).powi(2) <= r2 {
                    marked[index] = true;
                }
            }
        }
    }
    if let Some(path) = &params.path {
        let near_path = path_mask(&grid, path, params.path_radius);
        for (m, near) in marked.iter_mut().zip(near_path) {
            *m &= near;
        }
    }
    let cells: Vec<usize> = (0..marked.len()).filter(|&i| marked[i]).collect();
    if cells.is_empty() {
        return Err(MapError::NoPointsInBounds);
    }
    Ok(cells)
}

fn path_mask(grid: &VirtualScanGrid, path: &[[f64; 2]], radius: f64) -> Vec<bool> {
    let mut mask = vec![false; grid.cell_count()];
    let span = (radius / grid.resolution).ceil() as i64 + 1;
    for p in path {
        let cx = ((p[0] - grid.origin[0]) / grid.resolution).floor() as i64;
        let cy = ((p[1] - grid.origin[1]) / grid.resolution).floor() as i64;
        for iy in (cy - span).max(0)..=(cy + span).min(grid.ny as i64 - 1) {
            for ix in (cx - span).max(0)..=(cx + span).min(grid.nx as i64 - 1) {
                let index = iy as usize * grid.nx + ix as usize;
                let (x, y) = grid.cell_to_world(index);
                if (p[0] - x).hypot(p[1] - y) <= radius {
                    mask[index] = true;
                }
            }
        }
    }
    mask
}

/// 2-D buckets of map points so each virtual scan only projects points
/// within sensor range.
struct TileIndex {
    origin: [f64; 2],
    tile: f64,
    nx: usize,
    ny: usize,
    tiles: Vec<Vec<Point3<f64>>>,
}

impl TileIndex {
    fn new(points: &[Point3<f64>], tile: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            lo = [lo[0].min(p.x), lo[1].min(p.y)];
            hi = [hi[0].max(p.x), hi[1].max(p.y)];
        }
        let nx = ((hi[0] - lo[0]) / tile).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / tile).floor() as usize + 1;
        let mut tiles = vec![Vec::new(); nx * ny];
        for p in points {
            let ix = ((p.x - lo[0]) / tile).floor() as usize;
            let iy = ((p.y - lo[1]) / tile).floor() as usize;
            tiles[iy.min(ny - 1) * nx + ix.min(nx - 1)].push(*p);
        }
        Self { origin: lo, tile, nx, ny, tiles }
    }

    fn within<'a>(&'a self, x: f64, y: f64, radius: f64) -> impl Iterator<Item = &'a Point3<f64>> + 'a {
        let lo_x = (((x - radius - self.origin[0]) / self.tile).floor().max(0.0)) as usize;
        let lo_y = (((y - radius - self.origin[1]) / self.tile).floor().max(0.0)) as usize;
        let hi_x = (((x + radius - self.origin[0]) / self.tile).floor().max(-1.0) + 1.0) as usize;
        let hi_y = (((y + radius - self.origin[1]) / self.tile).floor().max(-1.0) + 1.0) as usize;
        let hi_x = hi_x.min(self.nx);
        let hi_y = hi_y.min(self.ny);
        (lo_y..hi_y.max(lo_y))
            .flat_map(move |iy| (lo_x..hi_x.max(lo_x)).map(move |ix| iy * self.nx + ix))
            .flat_map(move |i| self.tiles[i].iter())
    }
}

/// One level of detail: points of a voxelized copy of the map, used for
/// ranges in `[near, far)`.
struct DetailLevel {
    tiles: TileIndex,
    near: f64,
    far: f64,
}

/// Voxel size doubles each level; a level starts where its voxel is
/// `FOOTPRINT_SHARE` of the pixel footprint.
const FOOTPRINT_SHARE: f64 = 0.6;

fn detail_levels(cloud: &AggregatedCloud, base_voxel: f64, intr: &SensorIntrinsics) -> Vec<DetailLevel> {
    let pixel = intr
        .column_step_deg()
        .min((intr.fov_up + intr.fov_down) / intr.height as f64)
        .to_radians();
    let mut levels = Vec::new();
    let mut voxel = base_voxel;
    let mut near = 0.0;
    loop {
        let far = 2.0 * voxel / (FOOTPRINT_SHARE * pixel);
        let last = far >= intr.r_max;
        let points = voxel_downsample(cloud.points.points(), voxel);
        levels.push(DetailLevel {
            tiles: TileIndex::new(&points, 8.0),
            near,
            far: if last { f64::INFINITY } else { far },
        });
        if last {
            return levels;
        }
        near = far;
        voxel *= 2.0;
    }
}

fn render_levels(levels: &[DetailLevel], x: f64, y: f64, sensor_height: f64, intr: &SensorIntrinsics) -> RangeImage {
    let points = levels.iter().flat_map(|level| {
        let (near2, far2) = (level.near * level.near, level.far * level.far);
        level
            .tiles
            .within(x, y, level.far.min(intr.r_max))
            .map(move |p| Point3::new(p.x - x, p.y - y, p.z - sensor_height))
            .filter(move |p| {
                let d2 = p.coords.norm_squared();
                d2 >= near2 && d2 < far2
            })
    });
    estimate_normals(&project_points(points, intr))
}

/// Render a virtual scan at every candidate cell; cells with at least
/// `min_valid_pixels` returns become occupied.
pub fn build_grid(cloud: &AggregatedCloud, params: &GridParams) -> Result<VirtualScanGrid, MapError> {
    let candidates = candidate_cells(cloud, params)?;
    let mut grid = empty_grid(params)?;
    let intr = params.intrinsics;
    let levels = match params.render_voxel {
        Some(v) if v > 0.0 => detail_levels(cloud, v, &intr),
        Some(_) => return Err(MapError::BadResolution),
        None => vec![DetailLevel {
            tiles: TileIndex::new(cloud.points.points(), 8.0),
            near: 0.0,
            far: f64::INFINITY,
        }],
    };
    let rendered: Vec<(usize, RangeImage)> = candidates
        .par_iter()
        .filter_map(|&cell| {
            let (x, y) = grid.cell_to_world(cell);
            let scan = render_levels(&levels, x, y, params.sensor_height, &intr);
            (scan.valid_count() >= params.min_valid_pixels).then_some((cell, scan))
        })
        .collect();
    for (cell, scan) in rendered {
        grid.set_scan(cell, Some(scan));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane(extent: f64, step: f64, z: f64) -> Vec<Point3<f64>> {
        let n = (extent / step) as i64;
        let mut pts = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                pts.push(Point3::new(i as f64 * step, j as f64 * step, z));
            }
        }
        pts
    }

    #[test]
    fn aggregate_checks_counts() {
        let scans = vec![PointCloud::default()];
        assert!(matches!(aggregate(&scans, &[], 0.1), Err(MapError::CountMismatch { scans: 1, poses: 0 })));
    }

    #[test]
    fn aggregate_dedups_voxels() {
        let pts: Vec<_> = (0..500).map(|i| Point3::new(i as f64 * 0.013, (i % 7) as f64 * 0.05, 0.0)).collect();
        let scan = PointCloud::new(pts).unwrap();
        let one = aggregate(std::slice::from_ref(&scan), &[Isometry3::identity()], 0.1).unwrap();
        let keys: HashSet<_> = one.points.points().iter().map(|p| voxel_key(p, 0.1)).collect();
        assert_eq!(keys.len(), one.points.len());
        assert!(one.points.points().iter().all(|p| scan.points().contains(p)));
        let two = aggregate(&[scan.clone(), scan], &[Isometry3::identity(); 2], 0.1).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_cloud_renders_invalid_scan() {
        let cloud = AggregatedCloud { points: PointCloud::default(), voxel_size: 0.1 };
        let img = render_virtual_scan(&cloud, 1.0, 2.0, 1.7, &SensorIntrinsics::default());
        assert_eq!(img.valid_count(), 0);
    }

    #[test]
    fn candidate_cells_cover_populated_area() {
        let cloud = AggregatedCloud {
            points: PointCloud::new(plane(1.0, 0.05, 0.0)).unwrap(),
            voxel_size: 0.05,
        };
        let params = GridParams::new(0.2, Bounds2::new(-1.0, -1.0, 1.0, 1.0));
        assert_eq!(candidate_cells(&cloud, &params).unwrap().len(), 100);
    }

    #[test]
    fn bounds_without_points_is_an_error() {
        let cloud = AggregatedCloud {
            points: PointCloud::new(plane(1.0, 0.05, 0.0)).unwrap(),
            voxel_size: 0.05,
        };
        let params = GridParams::new(0.2, Bounds2::new(50.0, 50.0, 52.0, 52.0));
        assert!(matches!(build_grid(&cloud, &params), Err(MapError::NoPointsInBounds)));
        let empty = AggregatedCloud { points: PointCloud::default(), voxel_size: 0.05 };
        assert!(matches!(build_grid(&empty, &params), Err(MapError::EmptyCloud)));
        let bad = GridParams::new(0.0, Bounds2::new(-1.0, -1.0, 1.0, 1.0));
        assert!(matches!(build_grid(&cloud, &bad), Err(MapError::BadResolution)));
    }

    #[test]
    fn path_restricts_candidates() {
        let cloud = AggregatedCloud {
            points: PointCloud::new(plane(5.0, 0.1, 0.0)).unwrap(),
            voxel_size: 0.1,
        };
        let mut params = GridParams::new(1.0, Bounds2::new(-5.0, -5.0, 5.0, 5.0));
        assert_eq!(candidate_cells(&cloud, &params).unwrap().len(), 100);
        params.path = Some(vec![[-4.5, -4.5]]);
        // The diagonal neighbour's centre is sqrt(2) m away.
        params.path_radius = 1.2;
        assert_eq!(candidate_cells(&cloud, &params).unwrap(), vec![0, 1, 10]);
        params.path_radius = 1.5;
        assert_eq!(candidate_cells(&cloud, &params).unwrap(), vec![0, 1, 10, 11]);
    }

    proptest! {
        #[test]
        fn cell_index_round_trip(nx in 1usize..60, ny in 1usize..60, res in 0.05f64..3.0, ox in -100.0f64..100.0, oy in -100.0f64..100.0) {
            let grid = VirtualScanGrid::new([ox, oy], res, 1.7, (nx, ny), SensorIntrinsics::default());
            for i in 0..grid.cell_count() {
                let (x, y) = grid.cell_to_world(i);
                prop_assert_eq!(grid.world_to_cell(x, y), Some(i));
            }
            prop_assert_eq!(grid.world_to_cell(ox - 0.01, oy), None);
        }
    }
}

//! Shared fixtures for the benchmarks: a small urban world, scans along a
//! road and a corridor map around them.

use overlap_loc::map::{aggregate, build_grid};
use overlap_loc::scan::unproject;
use overlap_loc::sim::{simulate_scan, UrbanConfig};
use overlap_loc::{AggregatedCloud, Bounds2, GridParams, PointCloud, Pose2, RangeImage, SensorIntrinsics, VirtualScanGrid, WorldModel};

pub const HEIGHT: f64 = 1.7;

pub struct Fixture {
    pub world: WorldModel,
    pub sim: SensorIntrinsics,
    pub map_intrinsics: SensorIntrinsics,
    pub poses: Vec<Pose2>,
    pub scans: Vec<RangeImage>,
    pub cloud: AggregatedCloud,
}

impl Fixture {
    /// Scans every meter along 40 m of road in the default urban world.
    pub fn new() -> Self {
        let world = WorldModel::urban(&UrbanConfig::default(), 7);
        let sim = SensorIntrinsics { height: 32, width: 360, r_max: 50.0, ..SensorIntrinsics::default() };
        let map_intrinsics = SensorIntrinsics { height: 16, width: 180, ..sim };
        let poses: Vec<Pose2> = (0..=40).map(|i| Pose2::new(60.0 + i as f64, 20.0, 0.0)).collect();
        let scans: Vec<RangeImage> = poses.iter().map(|p| simulate_scan(&world, p, &sim, HEIGHT)).collect();
        let clouds: Vec<PointCloud> = scans.iter().map(unproject).collect();
        let isometries: Vec<_> = poses.iter().map(|p| p.to_isometry(HEIGHT)).collect();
        let cloud = aggregate(&clouds, &isometries, 0.1).expect("scans see the world");
        Self { world, sim, map_intrinsics, poses, scans, cloud }
    }

    /// Grid over the middle of the drive, restricted to the road.
    pub fn grid(&self) -> VirtualScanGrid {
        let mut params = GridParams::new(1.0, Bounds2::new(70.0, 14.0, 90.0, 26.0));
        params.intrinsics = self.map_intrinsics;
        params.path = Some(self.poses.iter().map(|p| [p.x, p.y]).collect());
        params.path_radius = 3.0;
        params.render_voxel = Some(0.2);
        build_grid(&self.cloud, &params).expect("corridor has map points")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

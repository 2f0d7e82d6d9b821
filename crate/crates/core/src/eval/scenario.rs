//! The desk-scale experiment: a map drive through a synthetic urban world
//! and a query drive through a perturbed copy of it.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PreparedSequence;
use crate::baselines::LikelihoodField;
use crate::map::{aggregate, build_grid, AggregatedCloud, GridParams, MapError, VirtualScanGrid};
use crate::pose::Bounds2;
use crate::scan::{unproject, PointCloud, SensorIntrinsics};
use crate::sim::{generate_dataset, loop_waypoints, perturb_world, Dataset, OdometryNoise, SimError, TrajectorySpec, UrbanConfig, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub world_seed: u64,
    pub traj_seed: u64,
    pub urban: UrbanConfig,
    /// Intrinsics of the simulated sensor.
    pub sim_intrinsics: SensorIntrinsics,
    /// Intrinsics of virtual scans and of query images.
    pub map_intrinsics: SensorIntrinsics,
    pub sensor_height: f64,
    /// Meters per frame of the map drive.
    pub map_speed: f64,
    /// Meters per frame of the query drive.
    pub query_speed: f64,
    /// Frames of the query drive.
    pub query_frames: usize,
    pub odometry_noise: OdometryNoise,
    /// Share of parked cars changed between the map and query worlds.
    pub perturb_fraction: f64,
    /// Voxel size of the aggregated map cloud.
    pub map_voxel: f64,
    /// Finest voxel size used to render virtual scans; farther points use
    /// coarser copies.
    pub render_voxel: f64,
    pub resolution: f64,
    pub candidate_radius: Option<f64>,
    /// Only cells within this distance of a map-drive pose are rendered.
    pub path_radius: Option<f64>,
}

impl Default for DeskConfig {
    fn default() -> Self {
        let sim = SensorIntrinsics { height: 32, width: 360, r_max: 50.0, ..SensorIntrinsics::default() };
        Self {
            world_seed: 7,
            traj_seed: 11,
            urban: UrbanConfig::default(),
            sim_intrinsics: sim,
            map_intrinsics: SensorIntrinsics { height: 16, width: 180, ..sim },
            sensor_height: 1.7,
            map_speed: 1.0,
            query_speed: 1.3,
            query_frames: 740,
            odometry_noise: OdometryNoise::default(),
            perturb_fraction: 0.2,
            map_voxel: 0.1,
            render_voxel: 0.2,
            resolution: 1.0,
            candidate_radius: None,
            path_radius: Some(3.0),
        }
    }
}

impl DeskConfig {
    pub fn map_trajectory(&self) -> TrajectorySpec {
        let waypoints = loop_waypoints(&self.urban);
        let length = tour_length(&waypoints);
        TrajectorySpec {
            waypoints,
            speed: self.map_speed,
            steps: (length / self.map_speed).floor() as usize,
            closed: true,
            noise: OdometryNoise { trans_sigma: 0.0, rot_sigma: 0.0 },
            seed: self.traj_seed,
        }
    }

    pub fn query_trajectory(&self) -> TrajectorySpec {
        TrajectorySpec {
            waypoints: loop_waypoints(&self.urban),
            speed: self.query_speed,
            steps: self.query_frames,
            closed: true,
            noise: self.odometry_noise,
            seed: self.traj_seed.wrapping_add(1),
        }
    }

    /// Grid parameters; `map_path` holds the map-drive positions.
    pub fn grid_params(&self, map_path: &[[f64; 2]]) -> GridParams {
        let s = self.urban.size;
        let defaults = GridParams::new(self.resolution, Bounds2::new(0.0, 0.0, s, s));
        GridParams {
            sensor_height: self.sensor_height,
            intrinsics: self.map_intrinsics,
            candidate_radius: self.candidate_radius,
            path: self.path_radius.map(|_| map_path.to_vec()),
            path_radius: self.path_radius.unwrap_or(defaults.path_radius),
            render_voxel: Some(self.render_voxel),
            ..defaults
        }
    }
}

fn tour_length(waypoints: &[[f64; 2]]) -> f64 {
    let n = waypoints.len();
    (0..n)
        .map(|i| {
            let (a, b) = (waypoints[i], waypoints[(i + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Worlds, drives, map cloud and virtual-scan grid of one desk experiment.
#[derive(Debug, Clone)]
pub struct DeskScenario {
    pub config: DeskConfig,
    pub world: WorldModel,
    pub perturbed: WorldModel,
    pub map_drive: Dataset,
    pub query_drive: Dataset,
    pub cloud: AggregatedCloud,
    pub grid: VirtualScanGrid,
    /// Seconds spent building the grid.
    pub grid_seconds: f64,
}

impl DeskScenario {
    pub fn build(config: DeskConfig) -> Result<Self, ScenarioError> {
        let world = WorldModel::urban(&config.urban, config.world_seed);
        let perturbed = perturb_world(&world, config.perturb_fraction, config.world_seed.wrapping_add(1));
        let map_drive = generate_dataset(&world, &config.map_trajectory(), &config.sim_intrinsics, config.sensor_height)?;
        let query_drive =
            generate_dataset(&perturbed, &config.query_trajectory(), &config.sim_intrinsics, config.sensor_height)?;
        let cloud = map_cloud(&map_drive, config.map_voxel)?;
        let t = Instant::now();
        let path: Vec<[f64; 2]> = map_drive.poses.iter().map(|p| [p.x, p.y]).collect();
        let grid = build_grid(&cloud, &config.grid_params(&path))?;
        let grid_seconds = t.elapsed().as_secs_f64();
        Ok(Self { config, world, perturbed, map_drive, query_drive, cloud, grid, grid_seconds })
    }

    pub fn query_sequence(&self) -> PreparedSequence {
        let clouds = self.query_drive.scans.par_iter().map(unproject).collect();
        PreparedSequence::new(clouds, self.query_drive.odometry.clone(), self.query_drive.poses.clone(), &self.grid)
    }

    pub fn likelihood_field(&self, sigma_hit: f64, samples: usize) -> LikelihoodField {
        LikelihoodField::new(&self.cloud.points, self.cloud.voxel_size, sigma_hit, samples, self.config.sensor_height)
            .expect("map cloud is non-empty and parameters are positive")
    }
}

/// Aggregated map-frame cloud of a drive, using its true poses.
pub fn map_cloud(drive: &Dataset, voxel: f64) -> Result<AggregatedCloud, MapError> {
    let scans: Vec<PointCloud> = drive.scans.par_iter().map(unproject).collect();
    let poses: Vec<_> = drive.poses.iter().map(|p| p.to_isometry(drive.sensor_height)).collect();
    aggregate(&scans, &poses, voxel)
}

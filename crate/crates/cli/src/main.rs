//! `overlap-loc`: simulate datasets, build virtual-scan maps, localize and
//! evaluate.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use overlap_loc::baselines::LikelihoodField;
use overlap_loc::eval::{
    format_trajectory, make_model, run_experiment, run_localization, write_report, DeskConfig, EvalConfig, MapContext,
    ModelKind, ModelSettings, PreparedSequence,
};
use overlap_loc::io::{list_scans, read_point_cloud, read_poses, write_point_cloud};
use overlap_loc::map::{aggregate, build_grid, load_grid, save_grid};
use overlap_loc::sim::{generate_dataset, perturb_world, read_odometry};
use overlap_loc::{Bounds2, GridParams, PointCloud, Pose2, SensorIntrinsics, VirtualScanGrid, WorldModel};

#[derive(Parser)]
#[command(name = "overlap-loc", version, about = "Overlap-based Monte-Carlo localization for 3-D LiDAR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic urban world with a map drive and a query drive
    /// through a perturbed copy of it.
    Simulate(SimulateArgs),
    /// Aggregate posed scans and render a grid of virtual scans.
    BuildMap(BuildMapArgs),
    /// Global localization of a scan sequence against a map.
    Localize(LocalizeArgs),
    /// Seeded runs over models and particle counts with a report.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 7)]
    world_seed: u64,
    #[arg(long, default_value_t = 11)]
    traj_seed: u64,
    /// Frames of the query drive.
    #[arg(long, default_value_t = 740)]
    query_frames: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildMapArgs {
    /// Directory of sensor-frame `*.bin` scans.
    #[arg(long)]
    scans: PathBuf,
    /// One 3x4 sensor pose per scan.
    #[arg(long)]
    poses: PathBuf,
    /// Cell size in meters.
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[arg(long)]
    out: PathBuf,
    /// Voxel size of the aggregated map cloud.
    #[arg(long, default_value_t = 0.1)]
    voxel: f64,
    /// Finest voxel size used for rendering; 0 renders the full cloud.
    #[arg(long, default_value_t = 0.2)]
    render_voxel: f64,
    /// Only render cells within this distance of a map pose; 0 renders
    /// every cell near map points.
    #[arg(long, default_value_t = 3.0)]
    path_radius: f64,
    #[arg(long, default_value_t = 16)]
    rows: usize,
    #[arg(long, default_value_t = 180)]
    columns: usize,
    #[arg(long, default_value_t = 50.0)]
    r_max: f64,
    #[arg(long, default_value_t = 1.7)]
    sensor_height: f64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "overlap")]
    model: ModelKind,
    /// Map cloud for the beam-end model; defaults to the file written next
    /// to the map by `build-map`.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Scan endpoints per beam-end evaluation.
    #[arg(long, default_value_t = 50)]
    beam_samples: usize,
    /// Range tolerance of the overlap scorer in meters.
    #[arg(long, default_value_t = overlap_loc::eval::LOCALIZATION_EPS_R)]
    eps_r: f64,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    odometry: PathBuf,
    #[arg(long, default_value_t = 5000)]
    particles: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    map: PathBuf,
    /// Directory with `scans/`, `odometry.txt` and ground-truth `poses.txt`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "overlap,beamend,histogram")]
    models: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,5000,10000")]
    particles: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Frames per run; run windows are spread evenly over the sequence.
    #[arg(long, default_value_t = 400)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    beam_samples: usize,
    #[arg(long, default_value_t = overlap_loc::eval::LOCALIZATION_EPS_R)]
    eps_r: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::BuildMap(a) => build_map(a),
        Command::Localize(a) => localize(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = DeskConfig { world_seed: a.world_seed, traj_seed: a.traj_seed, query_frames: a.query_frames, ..DeskConfig::default() };
    fs::create_dir_all(&a.out)?;
    let world = WorldModel::urban(&cfg.urban, cfg.world_seed);
    let perturbed = perturb_world(&world, cfg.perturb_fraction, cfg.world_seed.wrapping_add(1));
    world.save_json(&a.out.join("world.json"))?;
    perturbed.save_json(&a.out.join("query_world.json"))?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let map = generate_dataset(&world, &cfg.map_trajectory(), &cfg.sim_intrinsics, cfg.sensor_height)?;
    map.write(&a.out.join("map"))?;
    let query = generate_dataset(&perturbed, &cfg.query_trajectory(), &cfg.sim_intrinsics, cfg.sensor_height)?;
    query.write(&a.out.join("query"))?;
    eprintln!("map drive: {} scans, query drive: {} scans, written to {}", map.scans.len(), query.scans.len(), a.out.display());
    Ok(())
}

fn read_scans(dir: &Path) -> Result<Vec<PointCloud>> {
    let files = list_scans(dir)?;
    ensure!(!files.is_empty(), "no *.bin scans in {}", dir.display());
    files.iter().map(|f| read_point_cloud(f).map_err(Into::into)).collect()
}

/// Sidecar file holding the aggregated map cloud next to a grid file.
fn cloud_path(map: &Path) -> PathBuf {
    map.with_extension("cloud.bin")
}

/// Bounds of the cloud's footprint, widened to whole cells.
fn snapped_bounds(cloud: &PointCloud, resolution: f64) -> Bounds2 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in cloud.points() {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    let down = |v: f64| (v / resolution).floor() * resolution;
    let up = |v: f64| ((v / resolution).floor() + 1.0) * resolution;
    Bounds2::new(down(lo[0]), down(lo[1]), up(hi[0]), up(hi[1]))
}

fn build_map(a: BuildMapArgs) -> Result<()> {
    let scans = read_scans(&a.scans)?;
    let poses = read_poses(&a.poses)?;
    ensure!(scans.len() == poses.len(), "{} scans but {} poses", scans.len(), poses.len());
    let cloud = aggregate(&scans, &poses, a.voxel)?;
    let defaults = GridParams::new(a.resolution, snapped_bounds(&cloud.points, a.resolution));
    let params = GridParams {
        sensor_height: a.sensor_height,
        intrinsics: SensorIntrinsics { height: a.rows, width: a.columns, r_max: a.r_max, ..SensorIntrinsics::default() },
        path: (a.path_radius > 0.0).then(|| poses.iter().map(|p| [p.translation.x, p.translation.y]).collect()),
        path_radius: if a.path_radius > 0.0 { a.path_radius } else { defaults.path_radius },
        render_voxel: (a.render_voxel > 0.0).then_some(a.render_voxel),
        ..defaults
    };
    params.intrinsics.validate()?;
    let grid = build_grid(&cloud, &params)?;
    save_grid(&grid, &a.out)?;
    write_point_cloud(&cloud_path(&a.out), &cloud.points)?;
    eprintln!(
        "{} of {} cells occupied, {} map points; wrote {} and {}",
        grid.occupied_count(),
        grid.cell_count(),
        cloud.points.len(),
        a.out.display(),
        cloud_path(&a.out).display()
    );
    Ok(())
}

fn load_field(map: &Path, cloud: Option<&Path>, grid: &VirtualScanGrid, settings: &ModelSettings) -> Result<LikelihoodField> {
    let path = cloud.map_or_else(|| cloud_path(map), Path::to_path_buf);
    let points = read_point_cloud(&path).with_context(|| format!("beam-end map cloud {}", path.display()))?;
    Ok(LikelihoodField::new(&points, settings.beam_voxel, settings.beam_sigma_hit, settings.beam_samples, grid.sensor_height)?)
}

fn settings(beam_samples: usize, eps_r: f64) -> Result<ModelSettings> {
    ensure!(beam_samples > 0, "--beam-samples must be positive");
    ensure!(eps_r > 0.0, "--eps-r must be positive");
    Ok(ModelSettings { beam_samples, eps_r, ..ModelSettings::default() })
}

fn localize(a: LocalizeArgs) -> Result<()> {
    let grid = load_grid(&a.map)?;
    let clouds = read_scans(&a.scans)?;
    let odometry = read_odometry(&a.odometry)?;
    ensure!(clouds.len() == odometry.len(), "{} scans but {} odometry lines", clouds.len(), odometry.len());
    let settings = settings(a.model.beam_samples, a.model.eps_r)?;
    let field = match a.model.model {
        ModelKind::BeamEnd => Some(load_field(&a.map, a.model.cloud.as_deref(), &grid, &settings)?),
        _ => None,
    };
    let map = MapContext { grid: &grid, field: field.as_ref() };
    let model = make_model(a.model.model, &map, &settings).map_err(anyhow::Error::msg)?;
    let seq = PreparedSequence::new(clouds, odometry, Vec::new(), &grid);
    let run = run_localization(model.as_ref(), a.model.model, &grid, &seq, 0..seq.len(), a.particles, &settings.filter, a.seed)?;
    fs::write(&a.out, format_trajectory(&run))?;
    if let Some(last) = run.estimates.last() {
        eprintln!(
            "{} frames; final estimate ({:.2}, {:.2}, {:.3}) converged {}",
            run.len(),
            last.pose.x,
            last.pose.y,
            last.pose.theta,
            last.converged
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.models.is_empty() || a.particles.is_empty() || a.runs == 0 {
        bail!("need at least one model, one particle count and one run");
    }
    let grid = load_grid(&a.map)?;
    let clouds = read_scans(&a.dataset.join("scans"))?;
    let odometry = read_odometry(&a.dataset.join("odometry.txt"))?;
    let truth: Vec<Pose2> = read_poses(&a.dataset.join("poses.txt"))?.iter().map(Pose2::from_isometry).collect();
    ensure!(
        clouds.len() == odometry.len() && clouds.len() == truth.len(),
        "dataset has {} scans, {} odometry lines and {} poses",
        clouds.len(),
        odometry.len(),
        truth.len()
    );
    let settings = settings(a.beam_samples, a.eps_r)?;
    let field = match a.models.contains(&ModelKind::BeamEnd) {
        true => Some(load_field(&a.map, a.cloud.as_deref(), &grid, &settings)?),
        false => None,
    };
    let map = MapContext { grid: &grid, field: field.as_ref() };
    let seq = PreparedSequence::new(clouds, odometry, truth, &grid);
    let cfg = EvalConfig { particle_counts: a.particles, runs: a.runs, ..EvalConfig::default() };
    let results = run_experiment(&a.models, &map, &seq, &cfg, &settings, a.window, a.seed).map_err(anyhow::Error::msg)?;
    write_report(&a.out, &results, &cfg, Some(grid.occupied_count()))?;
    print!("{}", fs::read_to_string(a.out.join("summary.txt"))?);
    Ok(())
}

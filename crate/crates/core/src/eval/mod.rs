//! Evaluation protocol: seeded localization runs, success judgement,
//! accuracy metrics and observation-model evaluation counts.

mod report;
mod scenario;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{aggregate, format_trajectory, write_report, AggregateRow};
pub use scenario::{map_cloud, DeskConfig, DeskScenario, ScenarioError};

use crate::baselines::{BeamEndModel, HistogramModel, LikelihoodField};
use crate::map::VirtualScanGrid;
use crate::mcl::{
    initialize_global, step, FilterError, FilterParams, Observation, ObservationModel, OdometryControl, OverlapModel,
    PoseEstimate,
};
use crate::overlap::GeometricScorer;
use crate::pose::{wrap_degrees, Pose2};
use crate::scan::{estimate_normals, spherical_project, PointCloud, RangeImage};

/// Everything recorded for one localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub particles: usize,
    pub seed: u64,
    /// Index of the first frame of the run within its sequence.
    pub start_frame: usize,
    pub estimates: Vec<PoseEstimate>,
    pub truth: Vec<Pose2>,
    pub ess: Vec<f64>,
    pub evaluations: Vec<usize>,
    pub step_seconds: Vec<f64>,
}

impl RunResult {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Panics unless all per-step sequences have the same length.
    pub fn check_lengths(&self) {
        let n = self.len();
        assert!(
            self.truth.len() == n && self.ess.len() == n && self.evaluations.len() == n && self.step_seconds.len() == n,
            "per-step sequences of a run differ in length"
        );
    }

    /// First frame at which the filter reported convergence.
    pub fn convergence_frame(&self) -> Option<usize> {
        self.estimates.iter().position(|e| e.converged)
    }

    pub fn location_error(&self, frame: usize) -> f64 {
        let (e, t) = (&self.estimates[frame].pose, &self.truth[frame]);
        (e.x - t.x).hypot(e.y - t.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub particle_counts: Vec<usize>,
    pub runs: usize,
    /// Meters.
    pub success_radius: f64,
    /// Frames between success checks after convergence.
    pub check_interval: usize,
    /// Positional spread (m) below which the filter reports convergence.
    pub convergence_spread: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            particle_counts: vec![500, 1000, 5000, 10000],
            runs: 10,
            success_radius: 5.0,
            check_interval: 100,
            convergence_spread: 5.0,
        }
    }
}

/// Frames at which a converged run is checked: every `check_interval`
/// frames after convergence, plus the last frame.
pub fn checkpoints(converged_at: usize, len: usize, check_interval: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..)
        .map(|k| converged_at + k * check_interval)
        .take_while(|&f| f < len)
        .collect();
    if len > 0 && out.last() != Some(&(len - 1)) {
        out.push(len - 1);
    }
    out
}

/// A run succeeds when it converged and its location error is below the
/// success radius at every checkpoint.
pub fn judge_success(run: &RunResult, cfg: &EvalConfig) -> bool {
    let Some(c) = run.convergence_frame() else { return false };
    checkpoints(c, run.len(), cfg.check_interval)
        .into_iter()
        .all(|f| run.location_error(f) < cfg.success_radius)
}

pub fn success_rate(results: &[RunResult], cfg: &EvalConfig) -> f64 {
    assert!(!results.is_empty(), "success rate of no runs");
    results.iter().filter(|r| judge_success(r, cfg)).count() as f64 / results.len() as f64
}

/// Location RMSE (m) and yaw RMSE (degrees) from the convergence frame on,
/// or `None` if the run never converged.
pub fn rmse_metrics(run: &RunResult) -> Option<(f64, f64)> {
    let c = run.convergence_frame()?;
    let n = (run.len() - c) as f64;
    let (mut loc, mut yaw) = (0.0, 0.0);
    for f in c..run.len() {
        loc += run.location_error(f).powi(2);
        let dyaw = wrap_degrees((run.estimates[f].pose.theta - run.truth[f].theta).to_degrees());
        yaw += dyaw * dyaw;
    }
    Some(((loc / n).sqrt(), (yaw / n).sqrt()))
}

/// Mean evaluations per frame over the runs of one model and particle count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCounts {
    pub model: ModelKind,
    pub particles: usize,
    pub mean_per_step: Vec<f64>,
    pub max_per_step: Vec<usize>,
}

impl EvaluationCounts {
    pub fn overall_mean(&self) -> f64 {
        self.mean_per_step.iter().sum::<f64>() / self.mean_per_step.len().max(1) as f64
    }
}

/// Per-frame evaluation statistics grouped by model and particle count.
///
/// With `occupied_cells` given, panics if any memoized model ever evaluated
/// more cells than the map has.
pub fn evaluation_count_report(results: &[RunResult], occupied_cells: Option<usize>) -> Vec<EvaluationCounts> {
    let mut groups: Vec<(ModelKind, usize)> = results.iter().map(|r| (r.model, r.particles)).collect();
    groups.sort_by_key(|&(m, n)| (m as u8, n));
    groups.dedup();
    groups
        .into_iter()
        .map(|(model, particles)| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.model == model && r.particles == particles).collect();
            let len = runs.iter().map(|r| r.len()).max().unwrap_or(0);
            let mut mean_per_step = Vec::with_capacity(len);
            let mut max_per_step = Vec::with_capacity(len);
            for f in 0..len {
                let counts: Vec<usize> = runs.iter().filter_map(|r| r.evaluations.get(f).copied()).collect();
                mean_per_step.push(counts.iter().sum::<usize>() as f64 / counts.len() as f64);
                max_per_step.push(counts.iter().copied().max().unwrap_or(0));
            }
            if let (Some(limit), true) = (occupied_cells, model.is_memoized()) {
                assert!(
                    max_per_step.iter().all(|&c| c <= limit),
                    "{model} evaluated more cells than the map holds"
                );
            }
            EvaluationCounts { model, particles, mean_per_step, max_per_step }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Overlap,
    BeamEnd,
    Histogram,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Overlap, ModelKind::BeamEnd, ModelKind::Histogram];

    /// Whether the model scores grid cells once per step instead of every
    /// particle.
    pub fn is_memoized(self) -> bool {
        !matches!(self, ModelKind::BeamEnd)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Overlap => "overlap",
            ModelKind::BeamEnd => "beamend",
            ModelKind::Histogram => "histogram",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "overlap" => Ok(ModelKind::Overlap),
            "beamend" | "beam-end" => Ok(ModelKind::BeamEnd),
            "histogram" => Ok(ModelKind::Histogram),
            other => Err(format!("unknown model {other:?} (expected overlap, beamend or histogram)")),
        }
    }
}

/// Scorer range tolerance used for localization. Wider than the
/// ground-truth default so that cells a few metres off the true pose still
/// agree on the surrounding walls.
pub const LOCALIZATION_EPS_R: f64 = 3.0;

/// Parameters of the three observation models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub filter: FilterParams,
    pub eps_r: f64,
    pub beam_voxel: f64,
    pub beam_sigma_hit: f64,
    pub beam_samples: usize,
    pub histogram_bins: usize,
    pub histogram_lambda: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            eps_r: LOCALIZATION_EPS_R,
            beam_voxel: 0.1,
            beam_sigma_hit: 0.5,
            beam_samples: 1000,
            histogram_bins: 100,
            histogram_lambda: 5.0,
        }
    }
}

/// A query drive ready for localization: one range image (in the map's
/// intrinsics) and one cloud per frame, with odometry and ground truth.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub images: Vec<RangeImage>,
    pub clouds: Vec<PointCloud>,
    pub odometry: Vec<OdometryControl>,
    pub truth: Vec<Pose2>,
}

impl PreparedSequence {
    pub fn new(clouds: Vec<PointCloud>, odometry: Vec<OdometryControl>, truth: Vec<Pose2>, grid: &VirtualScanGrid) -> Self {
        assert_eq!(clouds.len(), odometry.len(), "one odometry entry per scan");
        let images = clouds
            .par_iter()
            .map(|c| estimate_normals(&spherical_project(c, &grid.intrinsics)))
            .collect();
        Self { images, clouds, odometry, truth }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// The map-side data the models need.
pub struct MapContext<'a> {
    pub grid: &'a VirtualScanGrid,
    /// Required for the beam-end model.
    pub field: Option<&'a LikelihoodField>,
}

/// Builds the observation model of the given kind.
pub fn make_model<'a>(
    kind: ModelKind,
    map: &MapContext<'a>,
    settings: &ModelSettings,
) -> Result<Box<dyn ObservationModel + 'a>, String> {
    Ok(match kind {
        ModelKind::Overlap => Box::new(OverlapModel::new(
            map.grid,
            GeometricScorer { eps_r: settings.eps_r },
            &settings.filter,
        )),
        ModelKind::BeamEnd => Box::new(BeamEndModel {
            field: map.field.ok_or("the beam-end model needs a likelihood field")?,
        }),
        ModelKind::Histogram => Box::new(
            HistogramModel::new(
                map.grid,
                settings.histogram_bins,
                settings.histogram_lambda,
                settings.filter.weight_floor,
            )
            .map_err(|e| e.to_string())?,
        ),
    })
}

/// Global localization over `frames` of `seq`, starting from particles
/// spread over the whole map. The first frame's odometry is ignored.
#[allow(clippy::too_many_arguments)]
pub fn run_localization(
    model: &dyn ObservationModel,
    kind: ModelKind,
    grid: &VirtualScanGrid,
    seq: &PreparedSequence,
    frames: std::ops::Range<usize>,
    particles: usize,
    params: &FilterParams,
    seed: u64,
) -> Result<RunResult, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = initialize_global(grid, particles, &mut rng)?;
    let start = frames.start;
    let mut run = RunResult {
        model: kind,
        particles,
        seed,
        start_frame: start,
        estimates: Vec::with_capacity(frames.len()),
        truth: Vec::with_capacity(frames.len()),
        ess: Vec::with_capacity(frames.len()),
        evaluations: Vec::with_capacity(frames.len()),
        step_seconds: Vec::with_capacity(frames.len()),
    };
    for f in frames {
        let t = Instant::now();
        let u = if f == start { OdometryControl::default() } else { seq.odometry[f] };
        let obs = Observation { image: &seq.images[f], cloud: &seq.clouds[f] };
        let (estimate, telemetry) = step(&mut ps, &u, model, &obs, params, &mut rng)?;
        run.step_seconds.push(t.elapsed().as_secs_f64());
        run.estimates.push(estimate);
        run.truth.push(seq.truth.get(f).copied().unwrap_or_default());
        run.ess.push(telemetry.ess);
        run.evaluations.push(telemetry.evaluations);
    }
    Ok(run)
}

/// Start frames of `runs` windows of `window` frames spread evenly over a
/// sequence of `len` frames. Windows longer than the sequence are clipped.
pub fn window_starts(len: usize, window: usize, runs: usize) -> Vec<usize> {
    let slack = len.saturating_sub(window);
    (0..runs)
        .map(|r| if runs > 1 { r * slack / (runs - 1) } else { 0 })
        .collect()
}

/// One run of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub model: ModelKind,
    pub particles: usize,
    pub run: usize,
}

/// Seed of a run; derived from the base seed and the run index only, so the
/// same window and seed are used for every model and particle count.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(run as u64)
}

/// All runs for the given models and the config's particle ladder, executed
/// in parallel. Run `r` uses window `r` of `window` frames.
pub fn run_experiment(
    models: &[ModelKind],
    map: &MapContext<'_>,
    seq: &PreparedSequence,
    cfg: &EvalConfig,
    settings: &ModelSettings,
    window: usize,
    base_seed: u64,
) -> Result<Vec<RunResult>, String> {
    let mut params = settings.filter;
    params.convergence_spread = cfg.convergence_spread;
    let built: Vec<(ModelKind, Box<dyn ObservationModel + '_>)> = models
        .iter()
        .map(|&k| make_model(k, map, settings).map(|m| (k, m)))
        .collect::<Result<_, _>>()?;
    let starts = window_starts(seq.len(), window, cfg.runs);
    let specs: Vec<RunSpec> = models
        .iter()
        .flat_map(|&model| {
            cfg.particle_counts
                .iter()
                .flat_map(move |&particles| (0..cfg.runs).map(move |run| RunSpec { model, particles, run }))
        })
        .collect();
    specs
        .par_iter()
        .map(|spec| {
            let model = &built.iter().find(|(k, _)| *k == spec.model).unwrap().1;
            let start = starts[spec.run];
            let end = (start + window).min(seq.len());
            run_localization(
                model.as_ref(),
                spec.model,
                map.grid,
                seq,
                start..end,
                spec.particles,
                &params,
                run_seed(base_seed, spec.run),
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(errors: &[f64], converged_from: Option<usize>) -> RunResult {
        let n = errors.len();
        RunResult {
            model: ModelKind::Overlap,
            particles: 10,
            seed: 0,
            start_frame: 0,
            estimates: errors
                .iter()
                .enumerate()
                .map(|(i, &e)| PoseEstimate {
                    pose: Pose2::new(e, 0.0, 0.0),
                    spread: 1.0,
                    converged: converged_from.is_some_and(|c| i >= c),
                })
                .collect(),
            truth: vec![Pose2::default(); n],
            ess: vec![10.0; n],
            evaluations: vec![1; n],
            step_seconds: vec![0.0; n],
        }
    }

    #[test]
    fn checkpoint_frames() {
        assert_eq!(checkpoints(10, 350, 100), vec![110, 210, 310, 349]);
        assert_eq!(checkpoints(10, 311, 100), vec![110, 210, 310]);
        assert_eq!(checkpoints(5, 6, 100), vec![5]);
    }

    #[test]
    fn never_converged_fails() {
        assert!(!judge_success(&scripted(&[0.0; 300], None), &EvalConfig::default()));
    }

    #[test]
    fn exact_tracking_succeeds() {
        let run = scripted(&[0.0; 300], Some(3));
        assert!(judge_success(&run, &EvalConfig::default()));
        assert_eq!(rmse_metrics(&run), Some((0.0, 0.0)));
    }

    #[test]
    fn divergence_at_a_checkpoint_fails() {
        let mut errors = vec![0.0; 300];
        errors[120] = 6.0;
        assert!(!judge_success(&scripted(&errors, Some(20)), &EvalConfig::default()));
        // The same excursion between checkpoints goes unnoticed.
        assert!(judge_success(&scripted(&errors, Some(21)), &EvalConfig::default()));
    }

    #[test]
    fn constant_offset_rmse() {
        let run = scripted(&[1.0; 50], Some(0));
        let (loc, yaw) = rmse_metrics(&run).unwrap();
        assert!((loc - 1.0).abs() < 1e-12 && yaw == 0.0);
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.to_string().parse::<ModelKind>(), Ok(m));
        }
        assert!("sonar".parse::<ModelKind>().is_err());
    }

    #[test]
    fn windows_are_spread_evenly() {
        assert_eq!(window_starts(100, 40, 4), vec![0, 20, 40, 60]);
        assert_eq!(window_starts(30, 40, 3), vec![0, 0, 0]);
        assert_eq!(window_starts(100, 40, 1), vec![0]);
    }
}

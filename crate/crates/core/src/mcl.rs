//! Monte-Carlo localization against a grid of virtual scans.
//!
//! The observation likelihood of a particle factors into a location term,
//! the overlap between the query scan and the virtual scan of the particle's
//! grid cell, and a heading term, a Gaussian on the difference between the
//! particle's heading and the yaw offset the scorer estimates against that
//! cell. Because both terms only depend on the cell, each occupied cell is
//! scored at most once per update.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::VirtualScanGrid;
use crate::overlap::{ObservationScorer, OverlapError, OverlapEstimate};
use crate::pose::{wrap_angle, wrap_degrees, Pose2};
use crate::scan::{PointCloud, RangeImage};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("the particle set is empty")]
    NoParticles,
    #[error("the grid has no occupied cells")]
    NoOccupiedCells,
    #[error("particle weights are not normalized")]
    NotNormalized,
    #[error(transparent)]
    Scorer(#[from] OverlapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, wrapped to `[-pi, pi)`.
    pub theta: f64,
    pub weight: f64,
}

impl Particle {
    pub fn pose(&self) -> Pose2 {
        Pose2 { x: self.x, y: self.y, theta: self.theta }
    }
}

/// Weighted pose hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    normalized: bool,
}

const NORMALIZED_TOLERANCE: f64 = 1e-9;

impl ParticleSet {
    /// Takes the weights as given; the set counts as normalized when they sum
    /// to one.
    pub fn new(particles: Vec<Particle>) -> Result<Self, FilterError> {
        if particles.is_empty() {
            return Err(FilterError::NoParticles);
        }
        assert!(
            particles.iter().all(|p| p.weight >= 0.0 && p.weight.is_finite()),
            "particle weights must be finite and non-negative"
        );
        let sum: f64 = particles.iter().map(|p| p.weight).sum();
        Ok(Self { particles, normalized: (sum - 1.0).abs() <= NORMALIZED_TOLERANCE })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.particles.iter().map(|p| p.weight)
    }

    /// Scale weights to sum to one. A set whose weights are all zero becomes
    /// uniform.
    pub fn normalize(&mut self) {
        let sum: f64 = self.weights().sum();
        let n = self.len() as f64;
        for p in &mut self.particles {
            p.weight = if sum > 0.0 { p.weight / sum } else { 1.0 / n };
        }
        self.normalized = true;
    }
}

/// Relative motion between consecutive scans, in the frame of the earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometryControl {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

/// Coefficients of the rotation-translation-rotation odometry model. The
/// noise standard deviations are
/// `rot1: a1 |rot1| + a2 trans`, `trans: a3 trans + a4 (|rot1| + |rot2|)`,
/// `rot2: a1 |rot2| + a2 trans`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub alpha: [f64; 4],
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self { alpha: [0.1, 0.1, 0.05, 0.05] }
    }
}

impl MotionNoise {
    pub fn zero() -> Self {
        Self { alpha: [0.0; 4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawModelParams {
    /// Standard deviation of the heading error, degrees.
    pub sigma_deg: f64,
}

impl Default for YawModelParams {
    fn default() -> Self {
        Self { sigma_deg: 5.0 }
    }
}

impl YawModelParams {
    /// Log of the heading factor for a scorer yaw estimate (degrees) and a
    /// particle heading (radians).
    #[inline]
    pub fn log_factor(&self, yaw_estimate_deg: f64, theta: f64) -> f64 {
        let residual = wrap_degrees(yaw_estimate_deg - theta.to_degrees());
        -residual * residual / (2.0 * self.sigma_deg * self.sigma_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub motion: MotionNoise,
    pub yaw: YawModelParams,
    /// The overlap factor is `overlap.powf(overlap_exponent)`.
    pub overlap_exponent: f64,
    /// Likelihood given to particles outside any occupied cell.
    pub weight_floor: f64,
    /// Resample when the effective sample size drops below this fraction of N.
    pub resample_fraction: f64,
    /// The estimate counts as converged when the weighted positional standard
    /// deviation is below this many meters.
    pub convergence_spread: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            motion: MotionNoise::default(),
            yaw: YawModelParams::default(),
            overlap_exponent: 1.0,
            weight_floor: 1e-6,
            resample_fraction: 0.5,
            convergence_spread: 5.0,
        }
    }
}

/// `n` particles spread uniformly over the occupied cells, with uniform
/// headings and equal weights.
///
/// Cells are drawn by a systematic sweep with a random offset over the
/// occupied cells ordered along a Hilbert curve, and headings follow a randomly shifted golden-ratio
/// sequence, so every particle is uniformly distributed while the set
/// covers position and heading more evenly than independent draws.
pub fn initialize_global<R: Rng + ?Sized>(
    grid: &VirtualScanGrid,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet, FilterError> {
    if n == 0 {
        return Err(FilterError::NoParticles);
    }
    let mut occupied = grid.occupied_indices();
    if occupied.is_empty() {
        return Err(FilterError::NoOccupiedCells);
    }
    let side = grid.nx.max(grid.ny).next_power_of_two();
    occupied.sort_by_key(|&c| hilbert_index(side, c % grid.nx, c / grid.nx));
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let half = grid.resolution / 2.0;
    let cell_offset: f64 = rng.random();
    let heading_offset: f64 = rng.random();
    let stride = occupied.len() as f64 / n as f64;
    let particles = (0..n)
        .map(|i| {
            let slot = (((i as f64 + cell_offset) * stride) as usize).min(occupied.len() - 1);
            let (cx, cy) = grid.cell_to_world(occupied[slot]);
            let turn = (heading_offset + i as f64 * GOLDEN).fract();
            Particle {
                x: cx + rng.random_range(-half..half),
                y: cy + rng.random_range(-half..half),
                theta: wrap_angle(-PI + 2.0 * PI * turn),
                weight: 1.0 / n as f64,
            }
        })
        .collect();
    Ok(ParticleSet { particles, normalized: true })
}

/// Position of `(x, y)` along the Hilbert curve filling a `side` x `side`
/// square, `side` a power of two.
fn hilbert_index(side: usize, mut x: usize, mut y: usize) -> usize {
    let mut d = 0;
    let mut s = side / 2;
    while s > 0 {
        let rx = usize::from(x & s > 0);
        let ry = usize::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = side - 1 - x;
                y = side - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Sample a successor pose of one particle.
pub fn sample_motion<R: Rng + ?Sized>(pose: Pose2, u: &OdometryControl, noise: &MotionNoise, rng: &mut R) -> Pose2 {
    let trans = u.dx.hypot(u.dy);
    let rot1 = if trans < 1e-9 { 0.0 } else { u.dy.atan2(u.dx) };
    let rot2 = wrap_angle(u.dtheta - rot1);
    let [a1, a2, a3, a4] = noise.alpha;
    let mut gauss = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let rot1_hat = rot1 + gauss(a1 * rot1.abs() + a2 * trans);
    let trans_hat = trans + gauss(a3 * trans + a4 * (rot1.abs() + rot2.abs()));
    let rot2_hat = rot2 + gauss(a1 * rot2.abs() + a2 * trans);
    let heading = pose.theta + rot1_hat;
    Pose2::new(
        pose.x + trans_hat * heading.cos(),
        pose.y + trans_hat * heading.sin(),
        heading + rot2_hat,
    )
}

/// Move every particle by a noisy sample of `u`; weights are untouched.
pub fn predict<R: Rng + ?Sized>(ps: &mut ParticleSet, u: &OdometryControl, noise: &MotionNoise, rng: &mut R) {
    for p in &mut ps.particles {
        let next = sample_motion(p.pose(), u, noise, rng);
        (p.x, p.y, p.theta) = (next.x, next.y, next.theta);
    }
}

/// What a model sees at one time step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Query scan projected with the map's intrinsics.
    pub image: &'a RangeImage,
    /// Query scan as a sensor-frame point cloud.
    pub cloud: &'a PointCloud,
}

/// Per-particle log-likelihoods and the number of model evaluations spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Likelihoods {
    pub log_likelihood: Vec<f64>,
    pub evaluations: usize,
}

pub trait ObservationModel: Sync {
    fn log_likelihoods(&self, particles: &[Particle], obs: &Observation<'_>) -> Result<Likelihoods, FilterError>;
}

/// Distinct occupied cells holding particles, and each particle's slot in
/// that list.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAssignment {
    pub cells: Vec<usize>,
    pub slot: Vec<Option<usize>>,
}

pub fn assign_cells(grid: &VirtualScanGrid, particles: &[Particle]) -> CellAssignment {
    let cell_of: Vec<Option<usize>> = particles
        .iter()
        .map(|p| grid.world_to_cell(p.x, p.y).filter(|&c| grid.is_occupied(c)))
        .collect();
    let mut cells: Vec<usize> = cell_of.iter().flatten().copied().collect();
    cells.sort_unstable();
    cells.dedup();
    let index: HashMap<usize, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let slot = cell_of.iter().map(|c| c.map(|c| index[&c])).collect();
    CellAssignment { cells, slot }
}

/// The overlap-and-yaw observation model.
pub struct OverlapModel<'g, S> {
    pub grid: &'g VirtualScanGrid,
    pub scorer: S,
    pub yaw: YawModelParams,
    pub exponent: f64,
    pub floor: f64,
}

impl<'g, S: ObservationScorer> OverlapModel<'g, S> {
    pub fn new(grid: &'g VirtualScanGrid, scorer: S, params: &FilterParams) -> Self {
        Self {
            grid,
            scorer,
            yaw: params.yaw,
            exponent: params.overlap_exponent,
            floor: params.weight_floor,
        }
    }

    /// One scorer call per distinct occupied cell, run in parallel.
    pub fn score_cells(&self, query: &RangeImage, cells: &[usize]) -> Result<Vec<OverlapEstimate>, OverlapError> {
        cells
            .par_iter()
            .map(|&c| self.scorer.score(query, self.grid.scan(c).expect("assigned cells are occupied")))
            .collect()
    }
}

impl<S: ObservationScorer> OverlapModel<'_, S> {
    pub fn likelihoods(&self, particles: &[Particle], query: &RangeImage) -> Result<Likelihoods, FilterError> {
        let assignment = assign_cells(self.grid, particles);
        let scores = self.score_cells(query, &assignment.cells)?;
        let floor = self.floor.ln();
        let log_likelihood = particles
            .iter()
            .zip(&assignment.slot)
            .map(|(p, slot)| match slot {
                Some(s) => {
                    let est = &scores[*s];
                    self.exponent * est.overlap.ln() + self.yaw.log_factor(est.yaw_offset, p.theta)
                }
                None => floor,
            })
            .collect();
        Ok(Likelihoods { log_likelihood, evaluations: assignment.cells.len() })
    }
}

impl<S: ObservationScorer> ObservationModel for OverlapModel<'_, S> {
    fn log_likelihoods(&self, particles: &[Particle], obs: &Observation<'_>) -> Result<Likelihoods, FilterError> {
        self.likelihoods(particles, obs.image)
    }
}

/// Multiply weights by `exp(log_likelihood)` and renormalize.
///
/// Computed in log space with the maximum subtracted, so likelihoods far
/// below the smallest positive double still rank correctly. If every
/// particle's new weight is zero the previous weights are kept.
pub fn apply_log_likelihoods(ps: &mut ParticleSet, log_likelihood: &[f64]) {
    assert_eq!(ps.len(), log_likelihood.len());
    let log_w: Vec<f64> = ps
        .particles
        .iter()
        .zip(log_likelihood)
        .map(|(p, l)| p.weight.ln() + l)
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        ps.normalize();
        return;
    }
    for (p, lw) in ps.particles.iter_mut().zip(&log_w) {
        p.weight = (lw - max).exp();
    }
    ps.normalize();
}

/// Weight update with any observation model; returns the evaluation count.
pub fn update_weights_with(
    ps: &mut ParticleSet,
    model: &dyn ObservationModel,
    obs: &Observation<'_>,
) -> Result<usize, FilterError> {
    let lik = model.log_likelihoods(&ps.particles, obs)?;
    apply_log_likelihoods(ps, &lik.log_likelihood);
    Ok(lik.evaluations)
}

/// Weight update with the overlap-and-yaw model; returns how many cells the
/// scorer evaluated.
pub fn update_weights<S: ObservationScorer>(
    ps: &mut ParticleSet,
    query: &RangeImage,
    grid: &VirtualScanGrid,
    scorer: S,
    params: &FilterParams,
) -> Result<usize, FilterError> {
    let lik = OverlapModel::new(grid, scorer, params).likelihoods(&ps.particles, query)?;
    apply_log_likelihoods(ps, &lik.log_likelihood);
    Ok(lik.evaluations)
}

/// `1 / sum(w^2)` of a normalized set.
pub fn effective_sample_size(ps: &ParticleSet) -> Result<f64, FilterError> {
    if !ps.normalized {
        return Err(FilterError::NotNormalized);
    }
    Ok(1.0 / ps.weights().map(|w| w * w).sum::<f64>())
}

/// Low-variance resampling to the same number of equally weighted particles.
pub fn systematic_resample<R: Rng + ?Sized>(ps: &ParticleSet, rng: &mut R) -> ParticleSet {
    let n = ps.len();
    let step = 1.0 / n as f64;
    let start = rng.random_range(0.0..step);
    let mut out = Vec::with_capacity(n);
    let mut cumulative = ps.particles[0].weight;
    let mut i = 0;
    for k in 0..n {
        let target = start + k as f64 * step;
        while target > cumulative && i + 1 < n {
            i += 1;
            cumulative += ps.particles[i].weight;
        }
        out.push(Particle { weight: step, ..ps.particles[i] });
    }
    ParticleSet { particles: out, normalized: true }
}

/// Resample when the effective sample size falls below `fraction * N`.
/// Returns whether resampling happened.
pub fn resample_if_needed<R: Rng + ?Sized>(
    ps: &mut ParticleSet,
    fraction: f64,
    rng: &mut R,
) -> Result<bool, FilterError> {
    let ess = effective_sample_size(ps)?;
    if ess < fraction * ps.len() as f64 {
        *ps = systematic_resample(ps, rng);
        Ok(true)
    } else {
        Ok(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose2,
    /// Weighted standard deviation of particle positions, meters.
    pub spread: f64,
    pub converged: bool,
}

/// Weighted mean position, circular mean heading, and positional spread.
pub fn estimate_pose(ps: &ParticleSet, convergence_spread: f64) -> Result<PoseEstimate, FilterError> {
    if !ps.normalized {
        return Err(FilterError::NotNormalized);
    }
    let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
    for p in &ps.particles {
        x += p.weight * p.x;
        y += p.weight * p.y;
        s += p.weight * p.theta.sin();
        c += p.weight * p.theta.cos();
    }
    let var: f64 = ps
        .particles
        .iter()
        .map(|p| p.weight * ((p.x - x).powi(2) + (p.y - y).powi(2)))
        .sum();
    let spread = var.max(0.0).sqrt();
    Ok(PoseEstimate {
        pose: Pose2::new(x, y, s.atan2(c)),
        spread,
        converged: spread < convergence_spread,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub evaluations: usize,
    /// Effective sample size right after the weight update.
    pub ess: f64,
    pub resampled: bool,
}

/// One full filter iteration: predict, weight, resample, estimate.
pub fn step<R: Rng + ?Sized>(
    ps: &mut ParticleSet,
    u: &OdometryControl,
    model: &dyn ObservationModel,
    obs: &Observation<'_>,
    params: &FilterParams,
    rng: &mut R,
) -> Result<(PoseEstimate, StepTelemetry), FilterError> {
    predict(ps, u, &params.motion, rng);
    let evaluations = update_weights_with(ps, model, obs)?;
    let ess = effective_sample_size(ps)?;
    let resampled = resample_if_needed(ps, params.resample_fraction, rng)?;
    let estimate = estimate_pose(ps, params.convergence_spread)?;
    Ok((estimate, StepTelemetry { evaluations, ess, resampled }))
}

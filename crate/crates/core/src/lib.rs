//! Monte-Carlo localization of 3-D LiDAR scans against a grid of virtual
//! scans, weighted by scan overlap and estimated yaw.
//!
//! The crate covers the whole pipeline: range-image projection
//! ([`scan`]), overlap and yaw estimation ([`overlap`]), virtual-scan maps
//! ([`map`]), the particle filter ([`mcl`]), two comparison observation
//! models ([`baselines`]), a synthetic urban world with a LiDAR simulator
//! ([`sim`]) and the evaluation protocol ([`eval`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod eval;
pub mod io;
pub mod map;
pub mod mcl;
pub mod overlap;
pub mod pose;
pub mod scan;
pub mod sim;

pub use map::{AggregatedCloud, GridParams, MapError, VirtualScanGrid};
pub use mcl::{FilterParams, OdometryControl, Particle, ParticleSet, PoseEstimate};
pub use overlap::{GeometricScorer, ObservationScorer, OverlapEstimate};
pub use pose::{Bounds2, Pose2};
pub use scan::{PointCloud, RangeImage, SensorIntrinsics};
pub use sim::WorldModel;

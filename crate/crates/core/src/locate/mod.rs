//! Position estimators.
//!
//! Propagation-unaware: [`lls`] and [`ippa`]. Propagation-aware:
//! [`mechanism_ls`] (transmission and reflection via virtual anchors),
//! [`dnls_known_edges`] and [`dnls_facade`] (diffraction paths).

mod dnls;
mod ippa;
mod lls;
mod lm;
mod mech;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ToaMeasurement;
use crate::geom::Point3;
use crate::scene::{floor_of, AnchorSpec, BuildingModel};

pub use dnls::{dnls_facade, dnls_first_paths, dnls_known_edges, diffraction_length_gradient, EdgeGroup, FacadeEstimate, FacadeLine};
pub use ippa::{ippa, ippa_trace};
pub use lls::{lls, lls_points, nls_fixed_height};
pub use mech::mechanism_ls;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionEstimate {
    pub position: Point3,
    pub method_tag: String,
    pub iterations: usize,
    /// Sum of squared range residuals at the returned position (m^2).
    pub final_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// Centroid of the anchors involved.
    Centroid,
    Provided([f64; 3]),
    /// Best of `k` deterministic perturbations of the centroid.
    Multistart(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub residual_tolerance: f64,
    pub ippa_relaxation: f64,
    pub init_strategy: InitStrategy,
    /// Perturbed restarts tried after a non-converged solve (0 disables).
    pub multistart_fallback: u32,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-9,
            residual_tolerance: 1e-18,
            ippa_relaxation: 1.0,
            init_strategy: InitStrategy::Centroid,
            multistart_fallback: 8,
        }
    }
}

impl SolverParams {
    pub fn with_init(mut self, init: InitStrategy) -> Self {
        self.init_strategy = init;
        self
    }

    pub fn validate(&self) -> Result<(), LocateError> {
        let ok = self.max_iterations > 0
            && self.step_tolerance > 0.0
            && self.residual_tolerance > 0.0
            && self.ippa_relaxation > 0.0
            && self.ippa_relaxation <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(LocateError::InvalidParams)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocateError {
    #[error("need at least {needed} anchors, got {got}")]
    TooFewAnchors { needed: usize, got: usize },
    #[error("need at least {needed} measurements, got {got}")]
    TooFewMeasurements { needed: usize, got: usize },
    #[error("{measurements} measurements cannot identify {unknowns} unknowns")]
    Underdetermined { measurements: usize, unknowns: usize },
    #[error("anchor geometry is rank deficient")]
    RankDeficient,
    #[error("unknown anchor {0}")]
    UnknownAnchor(String),
    #[error("unknown panel {0}")]
    UnknownPanel(String),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("measurement from {0} has no usable mechanism label")]
    UnsupportedMechanism(String),
    #[error("measurement from {0} has no LoS/NLoS label")]
    MissingLabel(String),
    #[error("solver did not converge within the iteration limit")]
    NonConvergence,
    #[error("invalid solver parameters")]
    InvalidParams,
}

/// A range to a known point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeObs {
    pub anchor: Point3,
    pub range: f64,
    pub sigma: f64,
}

pub(crate) fn resolve(measurements: &[ToaMeasurement], anchors: &[AnchorSpec]) -> Result<Vec<RangeObs>, LocateError> {
    measurements
        .iter()
        .map(|m| {
            let a = anchors
                .iter()
                .find(|a| a.id == m.anchor_id)
                .ok_or_else(|| LocateError::UnknownAnchor(m.anchor_id.clone()))?;
            Ok(RangeObs { anchor: a.position, range: m.range, sigma: m.sigma })
        })
        .collect()
}

pub(crate) fn centroid<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let (sum, n) = points.fold((crate::geom::Vec3::zeros(), 0usize), |(s, n), p| (s + p.coords, n + 1));
    Point3::from(sum / n.max(1) as f64)
}

/// Relative residual weights `sigma_min / sigma_i`; uniform when any sigma is
/// zero. A common rescaling of all sigmas leaves them unchanged.
pub(crate) fn weights(sigmas: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let min = sigmas.clone().fold(f64::INFINITY, f64::min);
    if min > 0.0 && min.is_finite() {
        sigmas.map(|s| min / s).collect()
    } else {
        sigmas.map(|_| 1.0).collect()
    }
}

/// Deterministic restart points around `center`.
pub(crate) fn restart_points(center: &Point3, radius: f64, k: u32) -> Vec<Point3> {
    const DIRS: [[f64; 3]; 14] = [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.577, 0.577, 0.577],
        [-0.577, -0.577, -0.577],
        [0.577, -0.577, 0.577],
        [-0.577, 0.577, -0.577],
        [0.577, 0.577, -0.577],
        [-0.577, -0.577, 0.577],
        [0.577, -0.577, -0.577],
        [-0.577, 0.577, 0.577],
    ];
    (0..k as usize)
        .map(|i| {
            let d = DIRS[i % DIRS.len()];
            let scale = radius * (1 + i / DIRS.len()) as f64;
            Point3::new(center.x + scale * d[0], center.y + scale * d[1], center.z + scale * d[2])
        })
        .collect()
}

pub(crate) fn spread(points: &[Point3]) -> f64 {
    let c = centroid(points.iter());
    let r = points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

pub(crate) fn sq(x: f64) -> f64 {
    x * x
}

pub(crate) fn range_residual(obs: &[RangeObs], p: &Point3) -> f64 {
    obs.iter().map(|o| sq((p - o.anchor).norm() - o.range)).sum()
}

/// Floor index of an estimate.
pub fn estimate_floor(estimate: &PositionEstimate, building: &BuildingModel) -> usize {
    floor_of(estimate.position.z, building)
}

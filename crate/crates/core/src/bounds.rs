//! Fisher information and position error bounds for range measurements.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::geom::{unit, Point3, Vec3};
use crate::raypath::{Mpc, RayError};

/// Largest condition number accepted by [`peb`].
pub const MAX_CONDITION: f64 = 1e12;

/// Diffraction solutions closer than this (edge fraction) to a clamp
/// transition are flagged.
pub const CLAMP_FLAG_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BoundsError {
    #[error("Fisher information is singular")]
    SingularFim,
}

/// Symmetric 3x3 Fisher information matrix (1/m^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fim3(Matrix3<f64>);

impl Default for Fim3 {
    fn default() -> Self {
        Self(Matrix3::zeros())
    }
}

impl Fim3 {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Adds the information `g g^T / sigma^2` of one range.
    pub fn add(&mut self, gradient: &Vec3, sigma: f64) {
        self.0 += gradient * gradient.transpose() / (sigma * sigma);
    }

    pub fn sum(&self, other: &Fim3) -> Fim3 {
        Fim3(self.0 + other.0)
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let e = SymmetricEigen::new(self.0).eigenvalues;
        let mut v = [e[0], e[1], e[2]];
        v.sort_by(f64::total_cmp);
        v
    }

    /// `lambda_max / lambda_min`, infinite when not positive definite.
    pub fn condition_number(&self) -> f64 {
        let [lo, _, hi] = self.eigenvalues();
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }
}

/// Gradient of an MPC's length with respect to the node: the unit vector
/// along the last leg. For reflections this is the direction from the
/// virtual anchor, for diffraction from the (possibly clamped) edge point.
pub fn path_gradient(mpc: &Mpc, node: &Point3) -> Result<Vec3, RayError> {
    let n = mpc.vertices.len();
    if n < 2 {
        return Err(RayError::DegenerateGeometry("mpc without legs"));
    }
    unit(&(node - mpc.vertices[n - 2])).ok_or(RayError::DegenerateGeometry("node on the last interaction vertex"))
}

pub fn fim_from_gradients(items: &[(Vec3, f64)]) -> Fim3 {
    let mut f = Fim3::default();
    for (g, s) in items {
        f.add(g, *s);
    }
    f
}

pub fn fim(mpcs_with_sigma: &[(&Mpc, f64)], node: &Point3) -> Result<Fim3, RayError> {
    let mut f = Fim3::default();
    for (mpc, s) in mpcs_with_sigma {
        f.add(&path_gradient(mpc, node)?, *s);
    }
    Ok(f)
}

/// Position error bound `sqrt(trace(F^-1))` in meters.
pub fn peb(fim: &Fim3) -> Result<f64, BoundsError> {
    if !(fim.condition_number() < MAX_CONDITION) {
        return Err(BoundsError::SingularFim);
    }
    let inv = fim.0.try_inverse().ok_or(BoundsError::SingularFim)?;
    Ok(libm::sqrt(inv.trace()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeBounds {
    /// One diffraction MPC (the shortest) per anchor.
    pub peb_1diff: Option<f64>,
    /// Every supplied MPC with its mechanism known.
    pub peb_multi: Option<f64>,
    /// Condition number of the single-diffraction information.
    pub fim_condition_number: f64,
    /// Some diffraction vertex sits near a clamp transition.
    pub clamp_flag: bool,
}

/// Both bounds at `node`; `per_anchor` holds the MPCs of each anchor link.
pub fn node_bounds(per_anchor: &[Vec<Mpc>], node: &Point3, sigma: f64) -> Result<NodeBounds, RayError> {
    let mut one = Fim3::default();
    let mut multi = Fim3::default();
    let mut clamp_flag = false;
    for mpcs in per_anchor {
        let shortest = mpcs
            .iter()
            .filter(|m| m.mechanism.is_diffraction())
            .min_by(|a, b| a.path_length.total_cmp(&b.path_length));
        if let Some(m) = shortest {
            one.add(&path_gradient(m, node)?, sigma);
        }
        for m in mpcs {
            multi.add(&path_gradient(m, node)?, sigma);
            if let Some(d) = &m.diffraction {
                clamp_flag |= d.clamp_margin() < CLAMP_FLAG_MARGIN;
            }
        }
    }
    Ok(NodeBounds {
        peb_1diff: peb(&one).ok(),
        peb_multi: peb(&multi).ok(),
        fim_condition_number: one.condition_number(),
        clamp_flag,
    })
}

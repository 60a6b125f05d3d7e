use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::lm::{levenberg_marquardt, LmOutcome};
use super::{
    centroid, resolve, restart_points, spread, sq, weights, InitStrategy, LocateError, PositionEstimate, RangeObs, SolverParams,
};
use crate::channel::ToaMeasurement;
use crate::geom::{Point3, Vec3};
use crate::raypath::{diffraction_point, virtual_anchor, Mechanism, RayError};
use crate::scene::{AnchorSpec, BuildingModel, EdgeSegment, WallPanel};

/// Diffraction path length from `anchor` to `node` via `edge` and its
/// gradient with respect to `node`. The gradient is the unit vector from the
/// diffraction point (or clamped endpoint) towards the node.
pub fn diffraction_length_gradient(anchor: &Point3, node: &Point3, edge: &EdgeSegment) -> Result<(f64, Vec3), RayError> {
    let sol = diffraction_point(anchor, node, edge)?;
    let d = node - sol.point;
    let n = d.norm();
    if !(n > 0.0) {
        return Err(RayError::DegenerateGeometry("node on the diffraction point"));
    }
    Ok((sol.path_length, d / n))
}

fn starts(params: &SolverParams, c: Point3, scale: f64) -> Vec<Point3> {
    match params.init_strategy {
        InitStrategy::Centroid => alloc::vec![c],
        InitStrategy::Provided(p) => alloc::vec![Point3::from(p)],
        InitStrategy::Multistart(k) => {
            let mut s = alloc::vec![c];
            s.extend(restart_points(&c, 0.25 * scale, k));
            s
        }
    }
}

fn better(a: &LmOutcome, b: &LmOutcome) -> bool {
    match (a.converged, b.converged) {
        (true, false) => true,
        (false, true) => false,
        _ => a.cost < b.cost,
    }
}

/// Runs LM from every start; on failure retries from perturbed starts.
fn solve<I, M>(
    primary: Vec<Point3>,
    scale: f64,
    rows: usize,
    init: I,
    model: M,
    params: &SolverParams,
) -> Result<(LmOutcome, usize), LocateError>
where
    I: Fn(&Point3) -> DVector<f64>,
    M: Fn(&DVector<f64>, &mut DVector<f64>, &mut DMatrix<f64>),
{
    let mut iterations = 0;
    let mut best: Option<LmOutcome> = None;
    let attempt = |p: &Point3, best: &mut Option<LmOutcome>, iterations: &mut usize| {
        let out = levenberg_marquardt(init(p), rows, |x, r, j| model(x, r, j), params);
        *iterations = (*iterations).max(out.iterations);
        if best.as_ref().is_none_or(|b| better(&out, b)) {
            *best = Some(out);
        }
    };
    for p in &primary {
        attempt(p, &mut best, &mut iterations);
    }
    if !best.as_ref().is_some_and(|b| b.converged) {
        if params.multistart_fallback == 0 {
            return Err(LocateError::NonConvergence);
        }
        for p in restart_points(&primary[0], 0.25 * scale, params.multistart_fallback) {
            attempt(&p, &mut best, &mut iterations);
        }
    }
    Ok((best.expect("at least one start"), iterations))
}

/// How a measured range depends on the node position.
enum PathModel<'a> {
    /// Shortest path over an edge.
    Edge(&'a EdgeSegment),
    /// Straight line from the (possibly virtual) anchor.
    Straight,
}

fn path_length_gradient(anchor: &Point3, node: &Point3, path: &PathModel<'_>) -> Result<(f64, Vec3), RayError> {
    match path {
        PathModel::Edge(e) => diffraction_length_gradient(anchor, node, e),
        PathModel::Straight => {
            let d = node - anchor;
            let n = d.norm();
            if !(n > 0.0) {
                return Err(RayError::DegenerateGeometry("node on the anchor"));
            }
            Ok((n, d / n))
        }
    }
}

fn path_nls(obs: &[RangeObs], paths: &[PathModel<'_>], params: &SolverParams, tag: &str) -> Result<PositionEstimate, LocateError> {
    let w = weights(obs.iter().map(|o| o.sigma));
    let pts: Vec<Point3> = obs.iter().map(|o| o.anchor).collect();
    let scale = spread(&pts);
    let c = centroid(pts.iter());
    let model = |x: &DVector<f64>, r: &mut DVector<f64>, j: &mut DMatrix<f64>| {
        let p = Point3::new(x[0], x[1], x[2]);
        for (i, (o, path)) in obs.iter().zip(paths).enumerate() {
            match path_length_gradient(&o.anchor, &p, path) {
                Ok((len, g)) => {
                    r[i] = w[i] * (len - o.range);
                    for k in 0..3 {
                        j[(i, k)] = w[i] * g[k];
                    }
                }
                Err(_) => {
                    r[i] = f64::INFINITY;
                }
            }
        }
    };
    let (out, iterations) = solve(
        starts(params, c, scale),
        scale,
        obs.len(),
        |p| DVector::from_column_slice(p.coords.as_slice()),
        model,
        params,
    )?;
    let position = Point3::new(out.x[0], out.x[1], out.x[2]);
    let final_residual = obs
        .iter()
        .zip(paths)
        .map(|(o, path)| path_length_gradient(&o.anchor, &position, path).map_or(f64::INFINITY, |(l, _)| sq(l - o.range)))
        .sum();
    Ok(PositionEstimate { position, method_tag: tag.to_string(), iterations, final_residual, converged: out.converged })
}

/// Diffraction NLS with every measurement tied to a known edge through its
/// `edge_id`.
pub fn dnls_known_edges(
    measurements: &[ToaMeasurement],
    anchors: &[AnchorSpec],
    edges: &[EdgeSegment],
    params: &SolverParams,
) -> Result<PositionEstimate, LocateError> {
    params.validate()?;
    if measurements.len() < 3 {
        return Err(LocateError::TooFewMeasurements { needed: 3, got: measurements.len() });
    }
    let obs = resolve(measurements, anchors)?;
    let paths = measurements
        .iter()
        .map(|m| {
            let id = m.edge_id.as_ref().ok_or_else(|| LocateError::UnsupportedMechanism(m.anchor_id.clone()))?;
            edges.iter().find(|e| &e.id == id).map(PathModel::Edge).ok_or_else(|| LocateError::UnknownEdge(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    path_nls(&obs, &paths, params, "dnls-map")
}

/// Diffraction NLS on the first arriving path of each link. Diffraction
/// paths follow their edge from the floor map; direct and transmitted paths
/// are straight lines; reflections are straight lines from the virtual
/// anchor.
pub fn dnls_first_paths(
    measurements: &[ToaMeasurement],
    anchors: &[AnchorSpec],
    building: &BuildingModel,
    params: &SolverParams,
) -> Result<PositionEstimate, LocateError> {
    params.validate()?;
    if measurements.len() < 3 {
        return Err(LocateError::TooFewMeasurements { needed: 3, got: measurements.len() });
    }
    let mut obs = resolve(measurements, anchors)?;
    let mut paths = Vec::with_capacity(obs.len());
    for (m, o) in measurements.iter().zip(&mut obs) {
        let path = match &m.true_mechanism {
            Some(Mechanism::Diffraction { edge_id }) => {
                PathModel::Edge(building.edge(edge_id).ok_or_else(|| LocateError::UnknownEdge(edge_id.clone()))?)
            }
            Some(Mechanism::LineOfSight) | Some(Mechanism::Transmission { .. }) => PathModel::Straight,
            Some(Mechanism::Reflection { panel_ids }) => {
                let panels = panel_ids
                    .iter()
                    .map(|id| building.wall(id).ok_or_else(|| LocateError::UnknownPanel(id.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                o.anchor = virtual_anchor(&o.anchor, &panels);
                PathModel::Straight
            }
            _ => return Err(LocateError::UnsupportedMechanism(m.anchor_id.clone())),
        };
        paths.push(path);
    }
    path_nls(&obs, &paths, params, "dnls-map")
}

/// Horizontal line of a facade: points `origin + t * direction` at any height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FacadeLine {
    pub origin: Point3,
    /// Unit, horizontal.
    pub direction: Vec3,
}

impl FacadeLine {
    pub fn from_panel(panel: &WallPanel) -> Option<Self> {
        Some(Self { origin: panel.corners[0], direction: panel.horizontal_direction()? })
    }

    pub fn point(&self, t: f64, z: f64) -> Point3 {
        Point3::new(self.origin.x + t * self.direction.x, self.origin.y + t * self.direction.y, z)
    }

    /// Along-facade coordinate of the horizontal projection of `p`.
    pub fn coordinate(&self, p: &Point3) -> f64 {
        (p.x - self.origin.x) * self.direction.x + (p.y - self.origin.y) * self.direction.y
    }

    /// Along-facade coordinate where the horizontal trace of `a -> b` meets
    /// the line, or of the midpoint when they are parallel.
    fn crossing(&self, a: &Point3, b: &Point3) -> f64 {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let (ux, uy) = (self.direction.x, self.direction.y);
        // a + s d = o + t u
        let det = ux * (-dy) - uy * (-dx);
        if det.abs() < 1e-12 {
            return self.coordinate(&Point3::from((a.coords + b.coords) * 0.5));
        }
        let (rx, ry) = (a.x - self.origin.x, a.y - self.origin.y);
        (rx * (-dy) - ry * (-dx)) / det
    }
}

/// Measurements sharing one unknown edge on a known facade line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeGroup {
    pub edge_id: String,
    pub facade: FacadeLine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacadeEstimate {
    pub estimate: PositionEstimate,
    /// Recovered along-facade coordinate per group, in group order.
    pub edge_coords: Vec<f64>,
}

/// Relaxed length `|a - q| + |q - p|` with `q` on the facade at height
/// `p.z`, and its partial derivatives in `(p, t)`.
fn relaxed(a: &Point3, p: &Point3, line: &FacadeLine, t: f64) -> (f64, Vec3, f64) {
    let q = line.point(t, p.z);
    let qa = q - a;
    let qp = q - p;
    let (na, np) = (qa.norm(), qp.norm());
    let ua = if na > 0.0 { qa / na } else { Vec3::zeros() };
    let up = if np > 0.0 { qp / np } else { Vec3::zeros() };
    // q.z follows p.z, so only the anchor leg sees p.z
    let dp = Vec3::new(-up.x, -up.y, ua.z);
    let dt = line.direction.dot(&ua) + line.direction.dot(&up);
    (na + np, dp, dt)
}

/// Diffraction NLS with unknown edge positions: each group's edge point is a
/// facade coordinate `t_j` solved jointly with the node, its height tied to
/// the node height.
pub fn dnls_facade(
    measurements: &[ToaMeasurement],
    anchors: &[AnchorSpec],
    groups: &[EdgeGroup],
    params: &SolverParams,
) -> Result<FacadeEstimate, LocateError> {
    params.validate()?;
    let unknowns = 3 + groups.len();
    if measurements.len() < unknowns {
        return Err(LocateError::Underdetermined { measurements: measurements.len(), unknowns });
    }
    let obs = resolve(measurements, anchors)?;
    let member = measurements
        .iter()
        .map(|m| {
            let id = m.edge_id.as_ref().ok_or_else(|| LocateError::UnsupportedMechanism(m.anchor_id.clone()))?;
            groups.iter().position(|g| &g.edge_id == id).ok_or_else(|| LocateError::UnknownEdge(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let w = weights(obs.iter().map(|o| o.sigma));
    let pts: Vec<Point3> = obs.iter().map(|o| o.anchor).collect();
    let scale = spread(&pts);
    let c = centroid(pts.iter());
    let g = groups.len();
    let init = |p: &Point3| {
        let mut x = DVector::zeros(3 + g);
        x.fixed_rows_mut::<3>(0).copy_from(&p.coords);
        for (k, grp) in groups.iter().enumerate() {
            let (sum, n) = obs
                .iter()
                .zip(&member)
                .filter(|(_, m)| **m == k)
                .fold((0.0, 0usize), |(s, n), (o, _)| (s + grp.facade.crossing(&o.anchor, p), n + 1));
            x[3 + k] = if n > 0 { sum / n as f64 } else { grp.facade.coordinate(p) };
        }
        x
    };
    let model = |x: &DVector<f64>, r: &mut DVector<f64>, j: &mut DMatrix<f64>| {
        let p = Point3::new(x[0], x[1], x[2]);
        j.fill(0.0);
        for (i, (o, &k)) in obs.iter().zip(&member).enumerate() {
            let (len, dp, dt) = relaxed(&o.anchor, &p, &groups[k].facade, x[3 + k]);
            r[i] = w[i] * (len - o.range);
            for d in 0..3 {
                j[(i, d)] = w[i] * dp[d];
            }
            j[(i, 3 + k)] = w[i] * dt;
        }
    };
    let (out, iterations) = solve(starts(params, c, scale), scale, obs.len(), init, model, params)?;
    let position = Point3::new(out.x[0], out.x[1], out.x[2]);
    let edge_coords: Vec<f64> = (0..g).map(|k| out.x[3 + k]).collect();
    let final_residual = obs
        .iter()
        .zip(&member)
        .map(|(o, &k)| sq(relaxed(&o.anchor, &position, &groups[k].facade, edge_coords[k]).0 - o.range))
        .sum();
    Ok(FacadeEstimate {
        estimate: PositionEstimate {
            position,
            method_tag: "dnls-facade".to_string(),
            iterations,
            final_residual,
            converged: out.converged,
        },
        edge_coords,
    })
}

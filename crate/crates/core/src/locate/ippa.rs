use alloc::string::ToString;
use alloc::vec::Vec;

use super::{centroid, resolve, restart_points, spread, InitStrategy, LocateError, PositionEstimate, RangeObs, SolverParams};
use crate::channel::{LosLabel, ToaMeasurement};
use crate::geom::{Point3, Vec3};
use crate::scene::AnchorSpec;

/// Projection onto the sphere (LoS) or closed ball (NLoS) of one measurement.
fn project(o: &RangeObs, label: LosLabel, x: &Point3) -> Point3 {
    let d = x - o.anchor;
    let n = d.norm();
    if label == LosLabel::NLoS && n <= o.range {
        return *x;
    }
    let dir = if n > 0.0 { d / n } else { Vec3::x() };
    o.anchor + dir * o.range
}

fn set_distance_sq(obs: &[RangeObs], labels: &[LosLabel], x: &Point3) -> f64 {
    obs.iter().zip(labels).map(|(o, l)| (project(o, *l, x) - x).norm_squared()).sum()
}

struct Run {
    x: Point3,
    iterations: usize,
    converged: bool,
    trace: Vec<Point3>,
}

fn run(obs: &[RangeObs], labels: &[LosLabel], x0: Point3, params: &SolverParams, keep_trace: bool) -> Run {
    let lambda = params.ippa_relaxation;
    let inv_n = 1.0 / obs.len() as f64;
    let mut x = x0;
    let mut trace = Vec::new();
    if keep_trace {
        trace.push(x);
    }
    for it in 1..=params.max_iterations {
        let mean_step = obs
            .iter()
            .zip(labels)
            .fold(Vec3::zeros(), |acc, (o, l)| acc + (project(o, *l, &x) - x))
            * inv_n;
        let step = mean_step * lambda;
        x += step;
        if keep_trace {
            trace.push(x);
        }
        if step.norm() <= params.step_tolerance {
            return Run { x, iterations: it, converged: true, trace };
        }
    }
    Run { x, iterations: params.max_iterations, converged: false, trace }
}

fn prepare(
    measurements: &[ToaMeasurement],
    los_labels: &[LosLabel],
    anchors: &[AnchorSpec],
    params: &SolverParams,
) -> Result<Vec<RangeObs>, LocateError> {
    params.validate()?;
    if measurements.len() < 4 {
        return Err(LocateError::TooFewAnchors { needed: 4, got: measurements.len() });
    }
    if los_labels.len() != measurements.len() {
        let missing = measurements.get(los_labels.len()).map(|m| m.anchor_id.clone()).unwrap_or_default();
        return Err(LocateError::MissingLabel(missing));
    }
    resolve(measurements, anchors)
}

/// Iterative parallel projections onto LoS spheres and NLoS balls.
pub fn ippa(
    measurements: &[ToaMeasurement],
    los_labels: &[LosLabel],
    anchors: &[AnchorSpec],
    params: &SolverParams,
) -> Result<PositionEstimate, LocateError> {
    let obs = prepare(measurements, los_labels, anchors, params)?;
    let c = centroid(obs.iter().map(|o| &o.anchor));
    let starts = match params.init_strategy {
        InitStrategy::Centroid => alloc::vec![c],
        InitStrategy::Provided(p) => alloc::vec![Point3::from(p)],
        InitStrategy::Multistart(k) => {
            let pts: Vec<Point3> = obs.iter().map(|o| o.anchor).collect();
            let mut s = alloc::vec![c];
            s.extend(restart_points(&c, 0.25 * spread(&pts), k));
            s
        }
    };
    let best = starts
        .into_iter()
        .map(|x0| {
            let r = run(&obs, los_labels, x0, params, false);
            let cost = set_distance_sq(&obs, los_labels, &r.x);
            (r, cost)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");
    Ok(PositionEstimate {
        position: best.0.x,
        method_tag: "ippa".to_string(),
        iterations: best.0.iterations,
        final_residual: best.1,
        converged: best.0.converged,
    })
}

/// Iterates of a single IPPA run from `x0`, including `x0`.
pub fn ippa_trace(
    measurements: &[ToaMeasurement],
    los_labels: &[LosLabel],
    anchors: &[AnchorSpec],
    x0: Point3,
    params: &SolverParams,
) -> Result<Vec<Point3>, LocateError> {
    let obs = prepare(measurements, los_labels, anchors, params)?;
    Ok(run(&obs, los_labels, x0, params, true).trace)
}

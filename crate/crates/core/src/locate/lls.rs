use alloc::string::ToString;

use nalgebra::{DMatrix, DVector};

use super::lm::levenberg_marquardt;
use super::{range_residual, resolve, LocateError, PositionEstimate, RangeObs, SolverParams};
use crate::channel::ToaMeasurement;
use crate::geom::Point3;
use crate::scene::AnchorSpec;

const RANK_TOL: f64 = 1e-10;

/// Linear least squares on squared-range differences against the first anchor.
pub fn lls(measurements: &[ToaMeasurement], anchors: &[AnchorSpec]) -> Result<PositionEstimate, LocateError> {
    let obs = resolve(measurements, anchors)?;
    lls_points(&obs, "lls")
}

/// [`lls`] on already-resolved anchor points (real or virtual).
pub fn lls_points(obs: &[RangeObs], tag: &str) -> Result<PositionEstimate, LocateError> {
    if obs.len() < 4 {
        return Err(LocateError::TooFewAnchors { needed: 4, got: obs.len() });
    }
    let a0 = obs[0].anchor.coords;
    let r0 = obs[0].range;
    let m = obs.len() - 1;
    let mut a = DMatrix::zeros(m, 3);
    let mut b = DVector::zeros(m);
    for (k, o) in obs[1..].iter().enumerate() {
        let ai = o.anchor.coords;
        let d = ai - a0;
        for c in 0..3 {
            a[(k, c)] = 2.0 * d[c];
        }
        b[k] = r0 * r0 - o.range * o.range + ai.norm_squared() - a0.norm_squared();
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return Err(LocateError::RankDeficient);
    }
    let x = svd.solve(&b, 0.0).map_err(|_| LocateError::RankDeficient)?;
    let position = Point3::new(x[0], x[1], x[2]);
    Ok(PositionEstimate {
        position,
        method_tag: tag.to_string(),
        iterations: 1,
        final_residual: range_residual(obs, &position),
        converged: true,
    })
}

/// Horizontal fix with the height held at `z`, for sessions with too few
/// anchors for a 3D solution.
pub fn nls_fixed_height(obs: &[RangeObs], z: f64, params: &SolverParams) -> Result<PositionEstimate, LocateError> {
    if obs.len() < 2 {
        return Err(LocateError::TooFewAnchors { needed: 2, got: obs.len() });
    }
    let c = super::centroid(obs.iter().map(|o| &o.anchor));
    let w = super::weights(obs.iter().map(|o| o.sigma));
    let x0 = match params.init_strategy {
        super::InitStrategy::Provided(p) => DVector::from_vec(alloc::vec![p[0], p[1]]),
        _ => DVector::from_vec(alloc::vec![c.x, c.y]),
    };
    let out = levenberg_marquardt(
        x0,
        obs.len(),
        |x, r, j| {
            let p = Point3::new(x[0], x[1], z);
            for (i, o) in obs.iter().enumerate() {
                let d = p - o.anchor;
                let n = d.norm();
                r[i] = w[i] * (n - o.range);
                let g = if n > 0.0 { d / n } else { d };
                j[(i, 0)] = w[i] * g.x;
                j[(i, 1)] = w[i] * g.y;
            }
        },
        params,
    );
    let position = Point3::new(out.x[0], out.x[1], z);
    Ok(PositionEstimate {
        position,
        method_tag: "nls-2d".to_string(),
        iterations: out.iterations,
        final_residual: range_residual(obs, &position),
        converged: out.converged,
    })
}

#[cfg(test)]
pub(crate) fn exact_obs(anchors: &[Point3], node: &Point3) -> alloc::vec::Vec<RangeObs> {
    anchors.iter().map(|a| RangeObs { anchor: *a, range: (node - a).norm(), sigma: 0.1 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point;
    use alloc::vec::Vec;

    fn tetra() -> Vec<Point3> {
        alloc::vec![point(0.0, 0.0, 0.0), point(10.0, 0.0, 0.0), point(0.0, 10.0, 0.0), point(0.0, 0.0, 10.0)]
    }

    #[test]
    fn exact_ranges_recover_node() {
        let est = lls_points(&exact_obs(&tetra(), &point(3.0, 4.0, 5.0)), "lls").unwrap();
        assert!((est.position - point(3.0, 4.0, 5.0)).norm() < 1e-8);
        assert_eq!(est.method_tag, "lls");
    }

    #[test]
    fn nlos_bias_degrades_lls() {
        let mut obs = exact_obs(&tetra(), &point(3.0, 4.0, 5.0));
        for o in &mut obs {
            o.range += 2.0;
        }
        let est = lls_points(&obs, "lls").unwrap();
        let err = (est.position - point(3.0, 4.0, 5.0)).norm();
        // direct evaluation of the linear system with biased ranges
        let r: Vec<f64> = obs.iter().map(|o| o.range).collect();
        let expect = point(
            (r[0] * r[0] - r[1] * r[1] + 100.0) / 20.0,
            (r[0] * r[0] - r[2] * r[2] + 100.0) / 20.0,
            (r[0] * r[0] - r[3] * r[3] + 100.0) / 20.0,
        );
        assert!((est.position - expect).norm() < 1e-9);
        assert!(err > 0.5, "err {err}");
    }

    #[test]
    fn three_anchors_rejected() {
        let obs = exact_obs(&tetra()[..3], &point(3.0, 4.0, 5.0));
        assert!(matches!(lls_points(&obs, "lls"), Err(LocateError::TooFewAnchors { got: 3, .. })));
    }

    #[test]
    fn coplanar_anchors_rejected() {
        let anchors = [point(0.0, 0.0, 0.0), point(10.0, 0.0, 0.0), point(0.0, 10.0, 0.0), point(10.0, 10.0, 0.0)];
        let obs = exact_obs(&anchors, &point(3.0, 4.0, 5.0));
        assert_eq!(lls_points(&obs, "lls"), Err(LocateError::RankDeficient));
    }

    #[test]
    fn fixed_height_fix() {
        let anchors = [point(0.0, 0.0, 2.0), point(10.0, 0.0, 2.0), point(0.0, 10.0, 2.0)];
        let obs = exact_obs(&anchors, &point(3.0, 4.0, 2.0));
        let est = nls_fixed_height(&obs, 2.0, &SolverParams::default()).unwrap();
        assert!((est.position - point(3.0, 4.0, 2.0)).norm() < 1e-6);
    }
}

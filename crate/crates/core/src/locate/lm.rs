//! Levenberg-Marquardt loop shared by the non-linear estimators.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::SolverParams;

pub(crate) struct LmOutcome {
    pub x: DVector<f64>,
    /// Sum of squared (weighted) residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    #[cfg_attr(not(test), allow(dead_code))]
    pub cost_history: Vec<f64>,
}

/// Minimizes `sum r_i(x)^2`. `model` fills the residual vector and its
/// Jacobian `d r / d x`. Only steps that lower the cost are accepted.
pub(crate) fn levenberg_marquardt<F>(x0: DVector<f64>, rows: usize, mut model: F, params: &SolverParams) -> LmOutcome
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>, &mut DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let mut r = DVector::zeros(rows);
    let mut j = DMatrix::zeros(rows, n);
    model(&x, &mut r, &mut j);
    let mut cost = r.norm_squared();
    let mut history = Vec::with_capacity(16);
    history.push(cost);

    let mut r_new = DVector::zeros(rows);
    let mut j_new = DMatrix::zeros(rows, n);
    let mut mu: Option<f64> = None;
    let mut nu = 2.0;
    let mut converged = cost <= params.residual_tolerance;
    let mut iterations = 0;

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        let jtj = j.tr_mul(&j);
        let g = j.tr_mul(&r);
        if g.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        let damping = *mu.get_or_insert_with(|| 1e-3 * jtj.diagonal().max().max(1e-12));
        let mut a = jtj.clone();
        for k in 0..n {
            a[(k, k)] += damping * jtj[(k, k)].max(1e-12);
        }
        let step = match a.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                mu = Some(damping * nu);
                nu *= 2.0;
                continue;
            }
        };
        let step_norm = step.norm();
        let x_try = &x + &step;
        model(&x_try, &mut r_new, &mut j_new);
        let cost_try = r_new.norm_squared();
        let small_step = step_norm <= params.step_tolerance * (1.0 + x.norm());
        if cost_try.is_finite() && cost_try < cost {
            x = x_try;
            core::mem::swap(&mut r, &mut r_new);
            core::mem::swap(&mut j, &mut j_new);
            cost = cost_try;
            history.push(cost);
            mu = Some((damping / 3.0).max(1e-15));
            nu = 2.0;
            if small_step || cost <= params.residual_tolerance {
                converged = true;
            }
        } else {
            if small_step {
                // no representable improvement left
                converged = true;
                break;
            }
            mu = Some(damping * nu);
            nu *= 2.0;
            if damping > 1e30 {
                break;
            }
        }
    }

    LmOutcome { x, cost, iterations, converged, cost_history: history }
}

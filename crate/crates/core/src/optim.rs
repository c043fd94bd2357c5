//! BFGS ascent with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Stop once `max |grad| < grad_tol`.
    pub grad_tol: f64,
    /// Sufficient-increase constant.
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, armijo: 1e-4, max_halvings: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct AscentReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Maximize `f` from `x0`. `f` returns the value and gradient.
///
/// Every accepted step strictly increases the objective. A trial point with
/// a non-finite value is treated as a failed step and the step is halved.
pub fn maximize<F>(mut f: F, x0: DVector<f64>, opts: &AscentOptions) -> Result<AscentReport>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut x = x0;
    let mut history = vec![fx];
    let initial_scale = |g: &DVector<f64>| 1.0 / g.norm().max(1.0);
    let mut h = DMatrix::identity(n, n) * initial_scale(&g);
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            return Ok(AscentReport { x, value: fx, iterations, converged: true, history });
        }
        let mut d = &h * &g;
        let mut slope = g.dot(&d);
        if !(slope > 0.0) {
            h = DMatrix::identity(n, n) * initial_scale(&g);
            fresh = true;
            d = &h * &g;
            slope = g.dot(&d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &x + &d * alpha;
            let (ft, gt) = f(&trial);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft >= fx + opts.armijo * alpha * slope && ft > fx {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n) * initial_scale(&g);
            fresh = true;
            continue;
        };
        iterations += 1;
        let s = &x_new - &x;
        // Curvature of -f.
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy^T + hy s^T) + (rho^2 yHy + rho) s s^T
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
            fresh = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
    }
    let converged = g.amax() < opts.grad_tol;
    Ok(AscentReport { x, value: fx, iterations, converged, history })
}

//! BFGS with Armijo backtracking, plus a central-difference gradient used to
//! validate analytic gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsParams {
    pub max_iters: usize,
    /// Stop when the objective decrease falls below this.
    pub abs_tol: f64,
    /// Stop when the decrease falls below this fraction of the objective.
    pub rel_tol: f64,
    /// Stop when the accepted step's largest component falls below this.
    pub step_tol: f64,
    /// Stop when the gradient's largest component falls below this.
    pub grad_tol: f64,
}

impl BfgsParams {
    /// All three progress tolerances set to `tol`.
    pub fn with_tolerance(tol: f64, max_iters: usize) -> Self {
        BfgsParams {
            max_iters,
            abs_tol: tol,
            rel_tol: tol,
            step_tol: tol,
            grad_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStatus {
    Abs,
    Rel,
    Step,
    Gradient,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub status: BfgsStatus,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes `objective`, which returns the value and gradient at a point.
///
/// The best point found is always returned; a failed line search is
/// reported through the status rather than as an error.
pub fn bfgs_minimize<F>(mut objective: F, x0: DVector<f64>, params: &BfgsParams) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = objective(&x);
    let initial_value = fx;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut iterations = 0;

    let status = loop {
        if g.amax() <= params.grad_tol {
            break BfgsStatus::Gradient;
        }
        if iterations >= params.max_iters {
            break BfgsStatus::MaxIters;
        }
        iterations += 1;

        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if slope.is_nan() || slope >= 0.0 {
            hinv.fill_with_identity();
            dir = -g.clone();
            slope = -g.norm_squared();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &x + alpha * &dir;
            let (fc, gc) = objective(&cand);
            if fc.is_finite() && fc <= fx + ARMIJO_C1 * alpha * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break BfgsStatus::LineSearchFailed;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let decrease = fx - f_new;
        let previous = fx;
        x = x_new;
        fx = f_new;
        g = g_new;

        if decrease < params.abs_tol {
            break BfgsStatus::Abs;
        }
        if decrease < params.rel_tol * previous.abs() {
            break BfgsStatus::Rel;
        }
        if s.amax() < params.step_tol {
            break BfgsStatus::Step;
        }

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                hinv *= sy / y.norm_squared();
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded.
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
    };

    BfgsResult {
        x,
        value: fx,
        initial_value,
        iterations,
        status,
    }
}

/// Central-difference gradient with step `h`.
pub fn numeric_gradient<F>(mut objective: F, point: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("difference step must be > 0, got {h}")));
    }
    let mut x = point.clone();
    let mut grad = DVector::zeros(point.len());
    for i in 0..point.len() {
        let xi = x[i];
        x[i] = xi + h;
        let fp = objective(&x);
        x[i] = xi - h;
        let fm = objective(&x);
        x[i] = xi;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

//! Gauss–Newton linearization and a Levenberg–Marquardt solver.
//!
//! The normal matrix `H = JᵀJ` is stored in profile (skyline) form: row `i`
//! keeps the columns `first[i]..=i` of its lower triangle. The profile is
//! derived from the graph structure, so a chain-ordered planning graph
//! factors in time linear in the horizon. Cholesky fill-in stays inside the
//! profile, which makes the factorization exact rather than approximate.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::perturb;
use crate::graph::{FactorGraph, Values, Variable};

/// Symmetric positive-semidefinite system `H δ = g` with `g = -Jᵀr`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    first: Vec<usize>,
    row_ptr: Vec<usize>,
    data: Vec<f64>,
    g: DVector<f64>,
}

impl NormalSystem {
    fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, f) in first.iter().enumerate() {
            row_ptr.push(acc);
            acc += i + 1 - f;
        }
        row_ptr.push(acc);
        NormalSystem {
            first,
            row_ptr,
            data: vec![0.0; acc],
            g: DVector::zeros(n),
        }
    }

    /// Dense input; only the lower triangle of `h` is read.
    pub fn from_dense(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || g.len() != n {
            return Err(Error::Contract(format!(
                "normal system shape mismatch: H {}x{}, g {}",
                n,
                h.ncols(),
                g.len()
            )));
        }
        let first = (0..n)
            .map(|i| (0..=i).find(|&j| h[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut sys = NormalSystem::with_profile(first);
        for i in 0..n {
            for j in sys.first[i]..=i {
                *sys.at_mut(i, j) = h[(i, j)];
            }
        }
        sys.g.copy_from(g);
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Stored entries of the lower triangle.
    pub fn stored_entries(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && j >= self.first[i]);
        &mut self.data[self.row_ptr[i] + j - self.first[i]]
    }

    /// Entry `H[i, j]`; zero outside the profile.
    pub fn h(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.row_ptr[i] + j - self.first[i]]
        }
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.h(i, j))
    }
}

fn profile_of(graph: &FactorGraph) -> Vec<usize> {
    let slots = graph.variables();
    let mut var_first: Vec<usize> = slots.iter().map(|s| s.offset).collect();
    for f in 0..graph.num_factors() {
        let vars = graph.factor_variables(f);
        let lo = vars.iter().map(|&v| slots[v as usize].offset).min().unwrap_or(0);
        for &v in vars {
            let e = &mut var_first[v as usize];
            *e = (*e).min(lo);
        }
    }
    let mut first = Vec::with_capacity(graph.dim());
    for (slot, f) in slots.iter().zip(&var_first) {
        first.extend(std::iter::repeat_n(*f, slot.dim));
    }
    first
}

/// Builds the normal system and returns it with the current total error.
pub(crate) fn linearize_ordered(
    graph: &FactorGraph,
    ordered: &[Variable],
    profile: &[usize],
) -> Result<(NormalSystem, f64)> {
    let slots = graph.variables();
    let mut sys = NormalSystem::with_profile(profile.to_vec());
    let mut error = 0.0;
    for f in 0..graph.num_factors() {
        if graph.factor_inactive(f, ordered) {
            continue;
        }
        let r = graph.evaluate_factor(f, ordered)?;
        error += r.squared_norm();
        if r.is_zero() {
            continue;
        }
        let vars = graph.factor_variables(f);
        let value = r.value();
        for (a, &va) in vars.iter().enumerate() {
            let sa = &slots[va as usize];
            let ja = r.block(a);
            for c in 0..sa.dim {
                let mut acc = 0.0;
                for (row, v) in value.iter().enumerate() {
                    acc += ja[(row, c)] * v;
                }
                sys.g[sa.offset + c] -= acc;
            }
            for (b, &vb) in vars.iter().enumerate() {
                let sb = &slots[vb as usize];
                if sb.offset > sa.offset {
                    continue;
                }
                let jb = r.block(b);
                for ca in 0..sa.dim {
                    let i = sa.offset + ca;
                    for cb in 0..sb.dim {
                        let j = sb.offset + cb;
                        if j > i {
                            break;
                        }
                        let mut acc = 0.0;
                        for row in 0..value.len() {
                            acc += ja[(row, ca)] * jb[(row, cb)];
                        }
                        *sys.at_mut(i, j) += acc;
                    }
                }
            }
        }
    }
    Ok((sys, error))
}

pub fn linearize(graph: &FactorGraph, values: &Values) -> Result<NormalSystem> {
    let ordered = graph.ordered(values)?;
    Ok(linearize_ordered(graph, &ordered, &profile_of(graph))?.0)
}

/// Solves `(H + λ·diag(H)) δ = g` by profile Cholesky.
///
/// Zero diagonal entries are floored at `1e-12` in the damping term only.
pub fn solve_normal(system: &NormalSystem, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("damping must be >= 0, got {lambda}")));
    }
    let n = system.dim();
    let first = &system.first;
    let ptr = &system.row_ptr;
    let mut l = system.data.clone();
    for i in 0..n {
        let d = &mut l[ptr[i] + i - first[i]];
        *d += lambda * d.max(1e-12);
    }

    for i in 0..n {
        let fi = first[i];
        let row_i = ptr[i];
        for j in fi..i {
            let fj = first[j];
            let row_j = ptr[j];
            let k0 = fi.max(fj);
            let mut s = l[row_i + j - fi];
            for k in k0..j {
                s -= l[row_i + k - fi] * l[row_j + k - fj];
            }
            l[row_i + j - fi] = s / l[row_j + j - fj];
        }
        let mut d = l[row_i + i - fi];
        for k in fi..i {
            let v = l[row_i + k - fi];
            d -= v * v;
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Indefinite { pivot: i });
        }
        l[row_i + i - fi] = d.sqrt();
    }

    let mut x = system.g.clone();
    for i in 0..n {
        let fi = first[i];
        let row_i = ptr[i];
        let mut s = x[i];
        for k in fi..i {
            s -= l[row_i + k - fi] * x[k];
        }
        x[i] = s / l[row_i + i - fi];
    }
    for i in (0..n).rev() {
        let fi = first[i];
        let row_i = ptr[i];
        let xi = x[i] / l[row_i + i - fi];
        x[i] = xi;
        for k in fi..i {
            x[k] -= l[row_i + k - fi] * xi;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LMParams {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub err_tol: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub max_iters: usize,
}

impl Default for LMParams {
    fn default() -> Self {
        LMParams {
            rel_tol: 1e-2,
            abs_tol: 1e-2,
            err_tol: 1e-2,
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            lambda_max: 1e10,
            max_iters: 100,
        }
    }
}

impl LMParams {
    /// Tolerances tight enough to reach the exact minimizer.
    pub fn tight() -> Self {
        LMParams {
            rel_tol: 1e-14,
            abs_tol: 1e-20,
            err_tol: 1e-24,
            ..LMParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("err_tol", self.err_tol),
            ("lambda_init", self.lambda_init),
            ("lambda_max", self.lambda_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.lambda_factor > 1.0 && self.lambda_factor.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_factor must be > 1, got {}",
                self.lambda_factor
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    Rel,
    Abs,
    Err,
    MaxIters,
    /// Every damped step was rejected up to the damping ceiling.
    Stalled,
    /// Quasi-Newton step length fell below its tolerance.
    Step,
    /// Quasi-Newton gradient vanished.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_error: f64,
    pub final_error: f64,
    /// Seconds.
    pub wall_time: f64,
    pub converged_by: ConvergedBy,
    /// Largest constraint violation left by a constrained solve, else 0.
    pub violation: f64,
}

fn retract(graph: &FactorGraph, ordered: &[Variable], delta: &DVector<f64>) -> Vec<Variable> {
    graph
        .variables()
        .iter()
        .zip(ordered)
        .map(|(slot, v)| perturb(v, &delta.as_slice()[slot.offset..slot.offset + slot.dim]))
        .collect()
}

/// Levenberg–Marquardt with Marquardt (diagonal) damping.
///
/// A step is accepted only if it lowers the total error, so the returned
/// estimate never has a higher error than `init`. Running out of damping
/// while steps are merely rejected means no further decrease is available
/// and ends the solve normally; running out while the damped system cannot
/// be factored is reported as [`Error::Diverged`].
pub fn lm_optimize(graph: &FactorGraph, init: &Values, params: &LMParams) -> Result<(Values, SolveStats)> {
    params.validate()?;
    let start = Instant::now();
    let mut current = graph.ordered(init)?;
    let profile = profile_of(graph);
    let (mut system, initial_error) = linearize_ordered(graph, &current, &profile)?;
    let mut error = initial_error;
    let mut lambda = params.lambda_init;
    let mut iterations = 0;

    let finish = |current: &[Variable], error: f64, iterations: usize, by: ConvergedBy| {
        (
            graph.to_values(current),
            SolveStats {
                iterations,
                initial_error,
                final_error: error,
                wall_time: start.elapsed().as_secs_f64(),
                converged_by: by,
                violation: 0.0,
            },
        )
    };

    if error < params.err_tol {
        return Ok(finish(&current, error, 0, ConvergedBy::Err));
    }

    while iterations < params.max_iters {
        iterations += 1;
        let accepted = loop {
            match solve_normal(&system, lambda) {
                Ok(delta) => {
                    let candidate = retract(graph, &current, &delta);
                    let new_error = graph.error_ordered(&candidate).unwrap_or(f64::INFINITY);
                    if new_error < error {
                        lambda = (lambda / params.lambda_factor).max(1e-12);
                        break Some((candidate, new_error));
                    }
                }
                Err(Error::Indefinite { .. }) if lambda >= params.lambda_max => {
                    return Err(Error::Diverged {
                        iterations,
                        lambda,
                        best: Box::new(graph.to_values(&current)),
                        best_error: error,
                    });
                }
                Err(Error::Indefinite { .. }) => {}
                Err(e) => return Err(e),
            }
            if lambda >= params.lambda_max {
                break None;
            }
            lambda *= params.lambda_factor;
        };

        let Some((candidate, new_error)) = accepted else {
            return Ok(finish(&current, error, iterations, ConvergedBy::Stalled));
        };
        let decrease = error - new_error;
        let previous = error;
        current = candidate;
        error = new_error;

        if error < params.err_tol {
            return Ok(finish(&current, error, iterations, ConvergedBy::Err));
        }
        if decrease < params.abs_tol {
            return Ok(finish(&current, error, iterations, ConvergedBy::Abs));
        }
        if decrease < params.rel_tol * previous {
            return Ok(finish(&current, error, iterations, ConvergedBy::Rel));
        }
        if iterations < params.max_iters {
            system = linearize_ordered(graph, &current, &profile)?.0;
        }
    }
    Ok(finish(&current, error, iterations, ConvergedBy::MaxIters))
}

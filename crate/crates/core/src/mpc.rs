//! Short-horizon MPC baselines over the centroid model.
//!
//! The penalty variant optimizes controls and states together and prices
//! model defects and obstacle intrusion as weighted squares. The constrained
//! variant eliminates states by rolling the model forward from the current
//! pose and enforces obstacle clearance `d ≥ R` with an augmented-Lagrangian
//! outer loop. Both use BFGS with analytic gradients as the inner solver.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::centroid_step;
use crate::planner::{Obstacle, PlanProblem, StepPlan};
use crate::quasi_newton::{bfgs_minimize, BfgsParams, BfgsStatus};
use crate::solver::{ConvergedBy, SolveStats};
use crate::types::{pose_boxminus, Control2, Pose2};

/// Diagonal weights of the MPC objective (inverse variances in factor terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcWeights {
    pub state: [f64; 3],
    pub terminal: [f64; 3],
    pub control: [f64; 2],
    /// Penalty variant only.
    pub motion: [f64; 3],
    /// Penalty variant only.
    pub obstacle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcParams {
    pub horizon: usize,
    pub weights: MpcWeights,
    /// Inner-solver progress tolerance (absolute, relative and step).
    pub tolerance: f64,
    pub max_iters: usize,
    /// Augmented-Lagrangian outer iterations (constrained variant).
    pub max_outer: usize,
    /// Largest clearance violation accepted as feasible (m).
    pub constraint_tol: f64,
}

impl MpcParams {
    /// Penalty formulation defaults.
    pub fn penalty() -> Self {
        MpcParams {
            horizon: 2,
            weights: MpcWeights {
                state: [1.0; 3],
                terminal: [1.0; 3],
                control: [1.0; 2],
                motion: [0.1; 3],
                obstacle: 1.0,
            },
            tolerance: 1e-2,
            max_iters: 200,
            max_outer: 20,
            constraint_tol: 1e-4,
        }
    }

    /// Constrained formulation defaults.
    pub fn constrained() -> Self {
        MpcParams {
            horizon: 2,
            weights: MpcWeights {
                state: [1.0; 3],
                terminal: [1e3; 3],
                control: [1e-3; 2],
                motion: [0.0; 3],
                obstacle: 0.0,
            },
            tolerance: 1e-4,
            max_iters: 200,
            max_outer: 20,
            constraint_tol: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("MPC horizon must be >= 1".into()));
        }
        let w = &self.weights;
        let all = w
            .state
            .iter()
            .chain(&w.terminal)
            .chain(&w.control)
            .chain(&w.motion)
            .chain(std::iter::once(&w.obstacle));
        if all.into_iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("MPC weights must be finite and >= 0".into()));
        }
        if !(self.tolerance > 0.0 && self.constraint_tol > 0.0) {
            return Err(Error::Config("MPC tolerances must be > 0".into()));
        }
        if self.max_iters == 0 || self.max_outer == 0 {
            return Err(Error::Config("MPC iteration caps must be >= 1".into()));
        }
        Ok(())
    }

    fn bfgs(&self) -> BfgsParams {
        BfgsParams::with_tolerance(self.tolerance, self.max_iters)
    }
}

/// Controls over the window and the states they lead to.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcDecision {
    pub controls: Vec<Control2>,
    pub states: Vec<Pose2>,
}

/// One MPC window `k..k+h`, truncated at the end of the reference.
#[derive(Debug, Clone)]
pub struct MpcWindow<'a> {
    current: Pose2,
    refs: &'a [Pose2],
    ref_controls: &'a [Control2],
    obstacles: &'a [Obstacle],
    radius: f64,
    ts: f64,
    weights: MpcWeights,
}

impl<'a> MpcWindow<'a> {
    pub fn new(p: &'a PlanProblem, params: &MpcParams, k: usize, current: Pose2) -> Result<Self> {
        let n = p.steps();
        if k >= n {
            return Err(Error::Contract(format!("step {k} outside horizon 0..{n}")));
        }
        let h = params.horizon.min(n - k);
        Ok(MpcWindow {
            current,
            refs: &p.reference.poses[k..=k + h],
            ref_controls: &p.reference.controls[k..k + h],
            obstacles: &p.obstacles,
            radius: p.safety_radius,
            ts: p.reference.ts,
            weights: params.weights,
        })
    }

    /// Steps in the (possibly truncated) window.
    pub fn len(&self) -> usize {
        self.ref_controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ref_controls.is_empty()
    }

    fn state_weight(&self, n: usize) -> &[f64; 3] {
        if n == self.len() {
            &self.weights.terminal
        } else {
            &self.weights.state
        }
    }

    /// Reference-tracking terms of stage `n`; returns `∂/∂x_n`.
    fn state_term(&self, n: usize, x: &Pose2, f: &mut f64) -> [f64; 3] {
        let w = self.state_weight(n);
        let r = pose_boxminus(x, &self.refs[n]);
        let mut d = [0.0; 3];
        for a in 0..3 {
            *f += w[a] * r[a] * r[a];
            d[a] = 2.0 * w[a] * r[a];
        }
        d
    }

    fn control_term(&self, n: usize, u: &Control2, f: &mut f64) -> [f64; 2] {
        let w = &self.weights.control;
        let r = [u.v - self.ref_controls[n].v, u.omega - self.ref_controls[n].omega];
        *f += w[0] * r[0] * r[0] + w[1] * r[1] * r[1];
        [2.0 * w[0] * r[0], 2.0 * w[1] * r[1]]
    }

    // ---- penalty formulation: z = [u_0, x_1, u_1, x_2, …] ----

    /// Dimension of the penalty decision vector.
    pub fn penalty_dim(&self) -> usize {
        5 * self.len()
    }

    fn penalty_state(&self, z: &DVector<f64>, n: usize) -> Pose2 {
        if n == 0 {
            self.current
        } else {
            let o = 5 * (n - 1) + 2;
            Pose2::new(z[o], z[o + 1], z[o + 2])
        }
    }

    fn penalty_control(z: &DVector<f64>, n: usize) -> Control2 {
        Control2::new(z[5 * n], z[5 * n + 1])
    }

    /// Rollout of the reference controls from the current pose.
    pub fn penalty_initial(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.penalty_dim());
        let mut x = self.current;
        for (n, u) in self.ref_controls.iter().enumerate() {
            z[5 * n] = u.v;
            z[5 * n + 1] = u.omega;
            x = centroid_step(&x, u, self.ts);
            z[5 * n + 2] = x.x();
            z[5 * n + 3] = x.y();
            z[5 * n + 4] = x.theta();
        }
        z
    }

    /// Penalty objective and its gradient.
    pub fn penalty_objective(&self, z: &DVector<f64>) -> (f64, DVector<f64>) {
        let h = self.len();
        let mut f = 0.0;
        let mut g = DVector::zeros(self.penalty_dim());
        let xoff = |n: usize| 5 * (n - 1) + 2;

        for n in 0..=h {
            let x = self.penalty_state(z, n);
            let d = self.state_term(n, &x, &mut f);
            if n > 0 {
                for a in 0..3 {
                    g[xoff(n) + a] += d[a];
                }
            }
        }

        let wm = &self.weights.motion;
        for n in 0..h {
            let u = Self::penalty_control(z, n);
            let du = self.control_term(n, &u, &mut f);
            g[5 * n] += du[0];
            g[5 * n + 1] += du[1];

            let x = self.penalty_state(z, n);
            let next = self.penalty_state(z, n + 1);
            let r = pose_boxminus(&centroid_step(&x, &u, self.ts), &next);
            let mut wr = [0.0; 3];
            for a in 0..3 {
                f += wm[a] * r[a] * r[a];
                wr[a] = 2.0 * wm[a] * r[a];
            }
            let (s, c) = x.theta().sin_cos();
            let ts = self.ts;
            if n > 0 {
                let o = xoff(n);
                g[o] += wr[0];
                g[o + 1] += wr[1];
                g[o + 2] += ts * u.v * (-s * wr[0] + c * wr[1]) + wr[2];
            }
            g[5 * n] += ts * (c * wr[0] + s * wr[1]);
            g[5 * n + 1] += ts * wr[2];
            let o = xoff(n + 1);
            for a in 0..3 {
                g[o + a] -= wr[a];
            }
        }

        let wo = self.weights.obstacle;
        for n in 1..=h {
            let x = self.penalty_state(z, n);
            for ob in self.obstacles {
                let dx = x.x() - ob.center[0];
                let dy = x.y() - ob.center[1];
                let d = dx.hypot(dy);
                if d >= self.radius {
                    continue;
                }
                let hinge = 1.0 - d / self.radius;
                f += wo * hinge * hinge;
                if d > 0.0 {
                    let k = -2.0 * wo * hinge / (d * self.radius);
                    g[xoff(n)] += k * dx;
                    g[xoff(n) + 1] += k * dy;
                }
            }
        }
        (f, g)
    }

    pub fn penalty_decision(&self, z: &DVector<f64>) -> MpcDecision {
        let h = self.len();
        MpcDecision {
            controls: (0..h).map(|n| Self::penalty_control(z, n)).collect(),
            states: (1..=h).map(|n| self.penalty_state(z, n)).collect(),
        }
    }

    // ---- constrained formulation: z = [u_0, u_1, …] ----

    pub fn shooting_dim(&self) -> usize {
        2 * self.len()
    }

    pub fn shooting_initial(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.shooting_dim(),
            self.ref_controls.iter().flat_map(|u| [u.v, u.omega]),
        )
    }

    /// States `x_0..x_h` reached by applying `z` from the current pose.
    pub fn rollout(&self, z: &DVector<f64>) -> Vec<Pose2> {
        let mut states = Vec::with_capacity(self.len() + 1);
        states.push(self.current);
        for n in 0..self.len() {
            let u = Control2::new(z[2 * n], z[2 * n + 1]);
            let next = centroid_step(&states[n], &u, self.ts);
            states.push(next);
        }
        states
    }

    /// `R − d` per (stage 1..=h, obstacle); feasible when `≤ 0`.
    pub fn constraints(&self, states: &[Pose2]) -> Vec<f64> {
        states[1..]
            .iter()
            .flat_map(|x| {
                self.obstacles
                    .iter()
                    .map(move |o| self.radius - x.distance_to_point(o.center))
            })
            .collect()
    }

    /// Tracking objective plus the PHR augmented-Lagrangian term for
    /// multipliers `mu` and penalty `rho`, with its gradient.
    pub fn shooting_objective(&self, z: &DVector<f64>, mu: &[f64], rho: f64) -> (f64, DVector<f64>) {
        let h = self.len();
        let states = self.rollout(z);
        let mut f = 0.0;
        let mut g = DVector::zeros(self.shooting_dim());
        let mut dx: Vec<[f64; 3]> = vec![[0.0; 3]; h + 1];

        for n in 0..=h {
            dx[n] = self.state_term(n, &states[n], &mut f);
        }
        for n in 0..h {
            let u = Control2::new(z[2 * n], z[2 * n + 1]);
            let du = self.control_term(n, &u, &mut f);
            g[2 * n] += du[0];
            g[2 * n + 1] += du[1];
        }
        let j = self.obstacles.len();
        for n in 1..=h {
            let x = &states[n];
            for (i, ob) in self.obstacles.iter().enumerate() {
                let m = mu[(n - 1) * j + i];
                let ex = x.x() - ob.center[0];
                let ey = x.y() - ob.center[1];
                let d = ex.hypot(ey);
                let t = m + rho * (self.radius - d);
                if t > 0.0 {
                    f += (t * t - m * m) / (2.0 * rho);
                    if d > 0.0 {
                        dx[n][0] -= t * ex / d;
                        dx[n][1] -= t * ey / d;
                    }
                } else {
                    f -= m * m / (2.0 * rho);
                }
            }
        }

        // Adjoint sweep through x_{n+1} = x_n + ts·(v cos θ_n, v sin θ_n, ω).
        let ts = self.ts;
        let mut adj = dx[h];
        for n in (0..h).rev() {
            let v = z[2 * n];
            let (s, c) = states[n].theta().sin_cos();
            g[2 * n] += ts * (c * adj[0] + s * adj[1]);
            g[2 * n + 1] += ts * adj[2];
            if n > 0 {
                let carry = ts * v * (-s * adj[0] + c * adj[1]);
                adj = [dx[n][0] + adj[0], dx[n][1] + adj[1], dx[n][2] + adj[2] + carry];
            }
        }
        (f, g)
    }

    pub fn shooting_decision(&self, z: &DVector<f64>) -> MpcDecision {
        MpcDecision {
            controls: (0..self.len()).map(|n| Control2::new(z[2 * n], z[2 * n + 1])).collect(),
            states: self.rollout(z)[1..].to_vec(),
        }
    }
}

fn converged_by(status: BfgsStatus) -> ConvergedBy {
    match status {
        BfgsStatus::Abs => ConvergedBy::Abs,
        BfgsStatus::Rel => ConvergedBy::Rel,
        BfgsStatus::Step => ConvergedBy::Step,
        BfgsStatus::Gradient => ConvergedBy::Gradient,
        BfgsStatus::MaxIters => ConvergedBy::MaxIters,
        BfgsStatus::LineSearchFailed => ConvergedBy::Stalled,
    }
}

/// Penalty MPC step: returns the raw first control and predicted states.
pub fn mpc_p_step(p: &PlanProblem, params: &MpcParams, k: usize, current: &Pose2) -> Result<StepPlan> {
    let start = Instant::now();
    let w = MpcWindow::new(p, params, k, *current)?;
    let res = bfgs_minimize(|z| w.penalty_objective(z), w.penalty_initial(), &params.bfgs());
    let decision = w.penalty_decision(&res.x);
    Ok(StepPlan {
        raw: decision.controls[0],
        predicted: decision.states,
        stats: SolveStats {
            iterations: res.iterations,
            initial_error: res.initial_value,
            final_error: res.value,
            wall_time: start.elapsed().as_secs_f64(),
            converged_by: converged_by(res.status),
            violation: 0.0,
        },
    })
}

/// Constrained MPC step via augmented Lagrangian.
///
/// `stats.violation` carries the largest clearance violation left when the
/// outer loop stops; it exceeds `constraint_tol` only if the cap was hit.
pub fn mpc_c_step(p: &PlanProblem, params: &MpcParams, k: usize, current: &Pose2) -> Result<StepPlan> {
    let start = Instant::now();
    let w = MpcWindow::new(p, params, k, *current)?;
    let bfgs = params.bfgs();
    let mut z = w.shooting_initial();
    let no_mu = vec![0.0; w.len() * p.obstacles.len()];
    let initial_error = w.shooting_objective(&z, &no_mu, 1.0).0 - penalty_part(&w, &z, &no_mu, 1.0);
    let mut mu = no_mu.clone();
    let mut rho = 1.0;
    let mut prev_violation = f64::INFINITY;
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let mut status = BfgsStatus::MaxIters;

    for _ in 0..params.max_outer {
        let res = bfgs_minimize(|z| w.shooting_objective(z, &mu, rho), z, &bfgs);
        iterations += res.iterations;
        status = res.status;
        z = res.x;
        let cons = w.constraints(&w.rollout(&z));
        violation = cons.iter().fold(0.0f64, |a, c| a.max(*c));
        if violation <= params.constraint_tol {
            break;
        }
        for (m, c) in mu.iter_mut().zip(&cons) {
            *m = (*m + rho * c).max(0.0);
        }
        if violation > 0.25 * prev_violation {
            rho *= 10.0;
        }
        prev_violation = violation;
    }

    let decision = w.shooting_decision(&z);
    let final_error = w.shooting_objective(&z, &no_mu, 1.0).0 - penalty_part(&w, &z, &no_mu, 1.0);
    Ok(StepPlan {
        raw: decision.controls[0],
        predicted: decision.states,
        stats: SolveStats {
            iterations,
            initial_error,
            final_error,
            wall_time: start.elapsed().as_secs_f64(),
            converged_by: converged_by(status),
            violation,
        },
    })
}

/// Augmented-Lagrangian contribution alone, so stats report the tracking cost.
fn penalty_part(w: &MpcWindow<'_>, z: &DVector<f64>, mu: &[f64], rho: f64) -> f64 {
    let cons = w.constraints(&w.rollout(z));
    cons.iter()
        .zip(mu)
        .map(|(c, m)| {
            let t = m + rho * c;
            if t > 0.0 {
                (t * t - m * m) / (2.0 * rho)
            } else {
                -m * m / (2.0 * rho)
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Formation;
    use crate::planner::{make_initial_path, Limits, LoopParams, NoiseModels};
    use crate::quasi_newton::numeric_gradient;
    use crate::solver::LMParams;

    fn problem(obstacles: Vec<Obstacle>) -> PlanProblem {
        PlanProblem {
            reference: make_initial_path(&Pose2::new(-2.0, 0.0, 0.0), [7.0, 0.0], 90, 0.1, 1.5).unwrap(),
            goal: [7.0, 0.0],
            obstacles,
            safety_radius: 0.5,
            formation: Formation::circular(4, 0.35).unwrap(),
            noise: NoiseModels::default(),
            lm: LMParams::default(),
            limits: Limits::default(),
            loop_params: LoopParams::default(),
        }
    }

    #[test]
    fn on_reference_returns_reference_control() {
        let p = problem(vec![]);
        for (params, f) in [
            (MpcParams::penalty(), mpc_p_step as fn(&_, &_, _, &_) -> _),
            (MpcParams::constrained(), mpc_c_step),
        ] {
            let plan = f(&p, &params, 10, &p.reference.poses[10]).unwrap();
            assert!((plan.raw.v - 1.0).abs() <= 1e-3);
            assert!(plan.raw.omega.abs() <= 1e-3);
            assert_eq!(plan.predicted.len(), 2);
        }
    }

    #[test]
    fn window_truncates_at_the_end() {
        let p = problem(vec![]);
        let w = MpcWindow::new(&p, &MpcParams::penalty(), 89, p.reference.poses[89]).unwrap();
        assert_eq!(w.len(), 1);
        assert!(MpcWindow::new(&p, &MpcParams::penalty(), 90, p.reference.poses[90]).is_err());
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let obstacles = vec![
            Obstacle {
                id: 0,
                center: [0.25, 0.2],
            },
            Obstacle {
                id: 1,
                center: [0.1, -0.3],
            },
        ];
        let p = problem(obstacles);
        let current = Pose2::new(0.05, 0.1, 0.2);
        let w = MpcWindow::new(&p, &MpcParams::penalty(), 20, current).unwrap();
        let z0 = w.penalty_initial() + DVector::from_fn(10, |i, _| 0.03 * ((i * 7 % 5) as f64 - 2.0));
        let (_, g) = w.penalty_objective(&z0);
        let num = numeric_gradient(|z| w.penalty_objective(z).0, &z0, 1e-6).unwrap();
        assert!((&g - &num).amax() <= 1e-5 * num.amax().max(1.0));

        let mu = vec![0.3, 0.0, 0.1, 0.5];
        let zs = w.shooting_initial() + DVector::from_vec(vec![0.1, 0.4, -0.2, -0.3]);
        let (_, g) = w.shooting_objective(&zs, &mu, 10.0);
        let num = numeric_gradient(|z| w.shooting_objective(z, &mu, 10.0).0, &zs, 1e-6).unwrap();
        assert!((&g - &num).amax() <= 1e-5 * num.amax().max(1.0));
    }

    #[test]
    fn constrained_step_keeps_clearance() {
        let p = problem(vec![Obstacle {
            id: 0,
            center: [0.3, 0.0],
        }]);
        let params = MpcParams::constrained();
        let current = Pose2::new(-0.3, 0.05, 0.0);
        let plan = mpc_c_step(&p, &params, 17, &current).unwrap();
        assert!(plan.stats.violation <= params.constraint_tol);
        let next = centroid_step(&current, &plan.raw, 0.1);
        assert!(next.distance_to_point([0.3, 0.0]) >= 0.5 - 1e-3);
    }
}

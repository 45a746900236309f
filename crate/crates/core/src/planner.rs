//! Receding-horizon planning over the centroid: the straight-line reference,
//! per-step graph construction from the current step to the terminal state,
//! and the phase-split post-processing shared by every step solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::Factor;
use crate::graph::{FactorGraph, Key, Values};
use crate::kinematics::{Formation, Phase, RotationDir};
use crate::solver::{lm_optimize, LMParams, SolveStats};
use crate::types::{wrap_angle, Control2, DiagNoise, Pose2};

/// Distance below which a target carries no usable bearing.
const BEARING_EPS: f64 = 1e-9;

/// Nominal poses and controls the planner regularizes towards.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub poses: Vec<Pose2>,
    pub controls: Vec<Control2>,
    pub ts: f64,
}

impl ReferencePath {
    /// Number of control steps `N`.
    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

/// Uniformly spaced straight line from `start` to `goal`, every pose facing
/// the goal, driven at the constant speed that covers it in `n` steps.
pub fn make_initial_path(start: &Pose2, goal: [f64; 2], n: usize, ts: f64, v_max: f64) -> Result<ReferencePath> {
    if n == 0 {
        return Err(Error::Domain("horizon must have at least one step".into()));
    }
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::Domain(format!("time step must be > 0, got {ts}")));
    }
    if !start.is_finite() || !(goal[0].is_finite() && goal[1].is_finite()) {
        return Err(Error::NonFinite("reference endpoints"));
    }
    let dx = goal[0] - start.x();
    let dy = goal[1] - start.y();
    let length = dx.hypot(dy);
    let heading = if length > 0.0 { dy.atan2(dx) } else { start.theta() };
    let speed = length / (n as f64 * ts);
    if speed > v_max {
        return Err(Error::InfeasibleSchedule {
            required: speed,
            limit: v_max,
        });
    }
    let poses = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            Pose2::new(start.x() + s * dx, start.y() + s * dy, heading)
        })
        .collect();
    Ok(ReferencePath {
        poses,
        controls: vec![Control2::new(speed, 0.0); n],
        ts,
    })
}

/// Per-axis variances of every factor kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub state: [f64; 3],
    pub terminal: [f64; 3],
    pub control: [f64; 2],
    pub motion: [f64; 3],
    pub obstacle: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            state: [0.1, 0.1, 0.02],
            terminal: [0.1, 0.1, 0.02],
            control: [0.1, 0.1],
            motion: [1e-4, 1e-4, 2e-5],
            obstacle: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModels {
    pub state: DiagNoise,
    pub terminal: DiagNoise,
    pub control: DiagNoise,
    pub motion: DiagNoise,
    pub obstacle: DiagNoise,
}

impl NoiseModels {
    pub fn from_config(c: &NoiseConfig) -> Result<Self> {
        Ok(NoiseModels {
            state: DiagNoise::from_variances(&c.state)?,
            terminal: DiagNoise::from_variances(&c.terminal)?,
            control: DiagNoise::from_variances(&c.control)?,
            motion: DiagNoise::from_variances(&c.motion)?,
            obstacle: DiagNoise::from_variances(&[c.obstacle])?,
        })
    }
}

impl Default for NoiseModels {
    fn default() -> Self {
        NoiseModels::from_config(&NoiseConfig::default()).expect("default variances are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub id: u32,
    pub center: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            v_max: 1.5,
            omega_max: 1.5,
        }
    }
}

/// Tuning of the closed loop around the step solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopParams {
    /// Mission ends once the centroid is this close to the goal (m).
    pub goal_tol: f64,
    /// Heading error that triggers an in-place rotation (rad).
    pub heading_tol: f64,
    /// Distance along the predicted path used to pick the target bearing (m).
    pub lookahead: f64,
    /// Rotation steps allowed per reference step before translation is forced.
    pub rotation_budget: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            goal_tol: 0.05,
            heading_tol: 0.02,
            lookahead: 0.8,
            rotation_budget: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    pub reference: ReferencePath,
    pub goal: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    pub safety_radius: f64,
    pub formation: Formation,
    pub noise: NoiseModels,
    pub lm: LMParams,
    pub limits: Limits,
    pub loop_params: LoopParams,
}

impl PlanProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.reference.steps();
        if n == 0 || self.reference.poses.len() != n + 1 {
            return Err(Error::Config(format!(
                "reference needs N >= 1 steps and N+1 poses, got {} controls and {} poses",
                n,
                self.reference.poses.len()
            )));
        }
        let positive = [
            ("safety_radius", self.safety_radius),
            ("goal_tol", self.loop_params.goal_tol),
            ("heading_tol", self.loop_params.heading_tol),
            ("lookahead", self.loop_params.lookahead),
            ("v_max", self.limits.v_max),
            ("omega_max", self.limits.omega_max),
            ("ts", self.reference.ts),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let mut ids: Vec<u32> = self.obstacles.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("obstacle ids must be unique".into()));
        }
        if self
            .obstacles
            .iter()
            .any(|o| !(o.center[0].is_finite() && o.center[1].is_finite()))
        {
            return Err(Error::Config("obstacle centers must be finite".into()));
        }
        self.lm.validate()
    }

    pub fn steps(&self) -> usize {
        self.reference.steps()
    }
}

/// Graph over `x_k..x_N`, `u_k..u_{N-1}` in chain order, seeded from the
/// reference with `x_k` replaced by the measured pose.
pub fn build_step_graph(p: &PlanProblem, k: usize, current: &Pose2) -> Result<(FactorGraph, Values)> {
    let n = p.steps();
    if k >= n {
        return Err(Error::Contract(format!("step {k} outside horizon 0..{n}")));
    }
    let h = n - k;
    let mut graph = FactorGraph::with_capacity(2 * h + 1, (3 + p.obstacles.len()) * h + 2);
    let mut values = Values::new();
    for i in k..=n {
        graph.add_variable(Key::Pose(i));
        values.insert_pose(i, if i == k { *current } else { p.reference.poses[i] });
        if i < n {
            graph.add_variable(Key::Control(i));
            values.insert_control(i, p.reference.controls[i]);
        }
    }

    graph.add_factor(Factor::anchor(k, *current))?;
    for i in k..=n {
        let noise = if i == n { &p.noise.terminal } else { &p.noise.state };
        graph.add_factor(Factor::pose_prior(i, p.reference.poses[i], noise.clone())?)?;
        if i < n {
            graph.add_factor(Factor::control_prior(
                i,
                p.reference.controls[i],
                p.noise.control.clone(),
            )?)?;
            graph.add_factor(Factor::motion(i, p.reference.ts, p.noise.motion.clone())?)?;
        }
        if i > k {
            for o in &p.obstacles {
                graph.add_factor(Factor::obstacle(
                    i,
                    o.center,
                    p.safety_radius,
                    p.noise.obstacle.clone(),
                )?)?;
            }
        }
    }
    Ok((graph, values))
}

/// Rotate towards `target` when the bearing error exceeds `heading_tol`.
///
/// The bearing is the direction to the target position, or the target's
/// own heading once the two positions coincide.
pub fn decide_phase(current: &Pose2, target: &Pose2, heading_tol: f64) -> Phase {
    let err = heading_error(current, target);
    if err.abs() > heading_tol {
        Phase::Rotate(RotationDir::of(err))
    } else {
        Phase::Translate
    }
}

fn heading_error(current: &Pose2, target: &Pose2) -> f64 {
    let desired = if current.distance(target) > BEARING_EPS {
        (target.y() - current.y()).atan2(target.x() - current.x())
    } else {
        target.theta()
    };
    wrap_angle(desired - current.theta())
}

/// First predicted pose at least `lookahead` away, else the last one.
pub fn lookahead_target(current: &Pose2, predicted: &[Pose2], lookahead: f64) -> Option<Pose2> {
    predicted
        .iter()
        .find(|q| q.distance(current) >= lookahead)
        .or(predicted.last())
        .copied()
}

/// Phase-consistent, saturated control derived from a raw solver output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub phase: Phase,
    pub control: Control2,
}

/// Shared post-processing for every step solver.
///
/// The target is picked along `predicted` (poses `k+1..`), continued by the
/// reference beyond the solver's horizon. Translation applies the solver's
/// speed with the turn rate zeroed; rotation turns in place at the rate that
/// closes the bearing error within one step, saturated at `omega_max`.
pub fn finalize_control(
    p: &PlanProblem,
    k: usize,
    current: &Pose2,
    raw: &Control2,
    predicted: &[Pose2],
    force_translate: bool,
) -> StepDecision {
    let beyond = (k + 1 + predicted.len()).min(p.reference.poses.len());
    let path: Vec<Pose2> = predicted.iter().chain(&p.reference.poses[beyond..]).copied().collect();
    let target = lookahead_target(current, &path, p.loop_params.lookahead);
    let phase = match target {
        Some(t) if !force_translate => decide_phase(current, &t, p.loop_params.heading_tol),
        _ => Phase::Translate,
    };
    let control = match phase {
        Phase::Translate => Control2::new(raw.v.clamp(-p.limits.v_max, p.limits.v_max), 0.0),
        Phase::Rotate(_) => {
            let err = heading_error(current, &target.expect("rotation needs a target"));
            let omega_max = p.limits.omega_max;
            Control2::new(0.0, (err / p.reference.ts).clamp(-omega_max, omega_max))
        }
    };
    StepDecision { phase, control }
}

/// Output of one receding-horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    /// Unprojected first control of the solution.
    pub raw: Control2,
    /// Predicted poses after the current one.
    pub predicted: Vec<Pose2>,
    pub stats: SolveStats,
}

/// Builds the step graph, solves it, and extracts the first control and the
/// remaining predicted trajectory.
pub fn solve_step_graph(p: &PlanProblem, k: usize, current: &Pose2) -> Result<StepPlan> {
    let (graph, init) = build_step_graph(p, k, current)?;
    let (sol, stats) = lm_optimize(&graph, &init, &p.lm)?;
    let predicted = (k + 1..=p.steps()).map(|i| sol.pose(i)).collect::<Result<Vec<_>>>()?;
    Ok(StepPlan {
        raw: sol.control(k)?,
        predicted,
        stats,
    })
}

/// One planning step: solve, then project the first control onto the phase
/// chosen from the predicted trajectory and clamp it.
pub fn plan_step(p: &PlanProblem, k: usize, current: &Pose2) -> Result<(StepDecision, StepPlan)> {
    let plan = solve_step_graph(p, k, current)?;
    let decision = finalize_control(p, k, current, &plan.raw, &plan.predicted, false);
    Ok((decision, plan))
}

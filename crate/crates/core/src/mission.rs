//! Closed-loop mission: observe, re-anchor, solve, split into a phase,
//! distribute to robots, and advance the world.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{centroid_from_robots, distribute_controls, required_robot_heading, Phase};
use crate::mpc::{mpc_c_step, mpc_p_step, MpcParams};
use crate::planner::{finalize_control, solve_step_graph, PlanProblem, StepPlan};
use crate::solver::{ConvergedBy, SolveStats};
use crate::types::{Control2, Pose2};
use crate::world::{EventKind, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Ours,
    MpcP,
    MpcC,
}

impl SolverKind {
    pub const ALL: [SolverKind; 3] = [SolverKind::Ours, SolverKind::MpcP, SolverKind::MpcC];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Ours => "ours",
            SolverKind::MpcP => "mpc_p",
            SolverKind::MpcC => "mpc_c",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(SolverKind::Ours),
            "mpc_p" => Ok(SolverKind::MpcP),
            "mpc_c" => Ok(SolverKind::MpcC),
            other => Err(Error::Config(format!(
                "unknown solver {other:?} (expected ours, mpc_p or mpc_c)"
            ))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A step solver with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSolver {
    Ours,
    MpcP(MpcParams),
    MpcC(MpcParams),
}

impl StepSolver {
    pub fn kind(&self) -> SolverKind {
        match self {
            StepSolver::Ours => SolverKind::Ours,
            StepSolver::MpcP(_) => SolverKind::MpcP,
            StepSolver::MpcC(_) => SolverKind::MpcC,
        }
    }

    pub fn solve(&self, p: &PlanProblem, k: usize, current: &Pose2) -> Result<StepPlan> {
        match self {
            StepSolver::Ours => solve_step_graph(p, k, current),
            StepSolver::MpcP(params) => mpc_p_step(p, params, k, current),
            StepSolver::MpcC(params) => mpc_c_step(p, params, k, current),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogEventKind {
    /// A scripted world event took effect.
    World { event: EventKind },
    /// The step solver failed; the reference control was applied instead.
    SolverFailed { message: String },
    /// The inner line search gave up; its best point was used.
    LineSearchFailed,
    /// The constrained solve stopped with clearance still violated.
    ConstraintViolation { violation: f64 },
    /// Rotation steps ran out; translation is forced from here on.
    RotationBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Index of the loop iteration (world step) the event belongs to.
    pub step: usize,
    #[serde(flatten)]
    pub kind: LogEventKind,
}

/// World state seen at the start of a loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Reference index `k` the planner was anchored to.
    pub ref_index: usize,
    /// Rigid fit to the true poses of the active robots.
    pub centroid: Pose2,
    /// Rigid fit to the (possibly noisy) observations; what the planner saw.
    pub measured: Pose2,
    pub robots: Vec<Pose2>,
    pub failed: Vec<bool>,
}

/// What was applied during one loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    /// Unprojected first control from the solver.
    pub raw: Control2,
    /// Applied centroid control.
    pub control: Control2,
    pub robot_controls: Vec<Control2>,
    pub stats: Option<SolveStats>,
    /// Solve plus control distribution (s).
    pub opt_time: f64,
    /// Whole loop iteration including observation and simulation (s).
    pub step_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachedGoal,
    HorizonEnd,
    AllRobotsFailed,
}

/// Append-only record of a mission. `snapshots` has one more entry than
/// `records`: the state in which the loop stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub solver: SolverKind,
    pub snapshots: Vec<Snapshot>,
    pub records: Vec<StepRecord>,
    pub events: Vec<LogEvent>,
    pub outcome: Outcome,
}

impl MissionLog {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("a log always holds the initial snapshot")
    }

    /// Centroid poses over time (true rigid fit).
    pub fn centroid_trajectory(&self) -> Vec<Pose2> {
        self.snapshots.iter().map(|s| s.centroid).collect()
    }
}

fn snapshot(world: &WorldState, p: &PlanProblem, k: usize, measured: Pose2) -> Result<Snapshot> {
    Ok(Snapshot {
        ref_index: k,
        centroid: centroid_from_robots(&world.active_poses(), &p.formation)?,
        measured,
        robots: world.robots().to_vec(),
        failed: world.failed_mask().to_vec(),
    })
}

/// Runs the receding-horizon loop until the centroid is within `goal_tol`
/// of the goal, the reference index reaches `N`, or every robot has failed.
///
/// The reference index advances only on translation steps. Each step is
/// re-anchored at the centroid fitted to the current observations.
pub fn run_mission(p: &PlanProblem, solver: &StepSolver, mut world: WorldState) -> Result<MissionLog> {
    p.validate()?;
    if world.robots().len() != p.formation.len() {
        return Err(Error::Config(format!(
            "world has {} robots but the formation has {} slots",
            world.robots().len(),
            p.formation.len()
        )));
    }
    let n = p.steps();
    let budget = p.loop_params.rotation_budget.saturating_mul(n);
    let ts = p.reference.ts;
    let mut log = MissionLog {
        solver: solver.kind(),
        snapshots: Vec::with_capacity(n + 1),
        records: Vec::with_capacity(n),
        events: Vec::new(),
        outcome: Outcome::HorizonEnd,
    };
    let mut k = 0;
    let mut rotations = 0;
    let mut budget_logged = false;

    loop {
        let step = log.records.len();
        let started = Instant::now();
        let obs = world.observe();
        if obs.is_empty() {
            // Everything is frozen: the last fitted centroid stays valid.
            let last = log.snapshots.last().ok_or(Error::AllRobotsFailed)?;
            let frozen = Snapshot {
                ref_index: k,
                robots: world.robots().to_vec(),
                failed: world.failed_mask().to_vec(),
                ..last.clone()
            };
            log.snapshots.push(frozen);
            log.outcome = Outcome::AllRobotsFailed;
            break;
        }
        let measured = centroid_from_robots(&obs, &p.formation)?;
        log.snapshots.push(snapshot(&world, p, k, measured)?);
        if measured.distance_to_point(p.goal) <= p.loop_params.goal_tol {
            log.outcome = Outcome::ReachedGoal;
            break;
        }
        if k >= n {
            log.outcome = Outcome::HorizonEnd;
            break;
        }

        let solve_start = Instant::now();
        let (raw, predicted, stats) = match solver.solve(p, k, &measured) {
            Ok(plan) => (plan.raw, plan.predicted, Some(plan.stats)),
            Err(e) => {
                log.events.push(LogEvent {
                    step,
                    kind: LogEventKind::SolverFailed { message: e.to_string() },
                });
                (p.reference.controls[k], p.reference.poses[k + 1..].to_vec(), None)
            }
        };
        if let Some(s) = &stats {
            if s.converged_by == ConvergedBy::Stalled && solver.kind() != SolverKind::Ours {
                log.events.push(LogEvent {
                    step,
                    kind: LogEventKind::LineSearchFailed,
                });
            }
            if let StepSolver::MpcC(params) = solver {
                if s.violation > params.constraint_tol {
                    log.events.push(LogEvent {
                        step,
                        kind: LogEventKind::ConstraintViolation { violation: s.violation },
                    });
                }
            }
        }
        let force = rotations >= budget;
        if force && !budget_logged {
            budget_logged = true;
            log.events.push(LogEvent {
                step,
                kind: LogEventKind::RotationBudgetExhausted,
            });
        }
        let decision = finalize_control(p, k, &measured, &raw, &predicted, force);
        let robot_controls = distribute_controls(&decision.control, &p.formation, decision.phase)?;
        let headings: Vec<f64> = p
            .formation
            .slots()
            .iter()
            .map(|s| required_robot_heading(measured.theta(), s, decision.phase))
            .collect();
        let opt_time = solve_start.elapsed().as_secs_f64();

        let applied = world.step(&robot_controls, &headings, ts)?;
        log.events.extend(applied.into_iter().map(|e| LogEvent {
            step,
            kind: LogEventKind::World { event: e.kind },
        }));
        log.records.push(StepRecord {
            phase: decision.phase,
            raw,
            control: decision.control,
            robot_controls,
            stats,
            opt_time,
            step_time: started.elapsed().as_secs_f64(),
        });
        match decision.phase {
            Phase::Translate => k += 1,
            Phase::Rotate(_) => rotations += 1,
        }
    }
    Ok(log)
}

//! Joint planning and control for a team of unicycle robots carrying a rigid
//! payload, built on a factor-graph trajectory optimizer, together with the
//! MPC baselines, a kinematic simulator and the evaluation harness.

pub mod error;
pub mod factors;
pub mod graph;
pub mod kinematics;
pub mod metrics;
pub mod mission;
pub mod mpc;
pub mod planner;
pub mod quasi_newton;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod types;
pub mod world;

pub use error::{Error, Result};
pub use factors::{Factor, FactorData, FactorKind, Residual};
pub use graph::{total_error, FactorGraph, Key, Values, Variable};
pub use kinematics::{Formation, FormationSlot, Phase, RotationDir};
pub use metrics::{compute_metrics, RunMetrics};
pub use mission::{run_mission, MissionLog, Outcome, SolverKind, StepSolver};
pub use mpc::{mpc_c_step, mpc_p_step, MpcParams, MpcWeights};
pub use planner::{
    build_step_graph, decide_phase, make_initial_path, plan_step, Limits, LoopParams, NoiseConfig, NoiseModels,
    Obstacle, PlanProblem, ReferencePath, StepPlan,
};
pub use report::{emit_csv, read_csv, sweep_obstacles, sweep_robots, RunRow, SweepOptions};
pub use scenario::{ScenarioConfig, EXPERIMENT1_OBSTACLES};
pub use solver::{linearize, lm_optimize, solve_normal, ConvergedBy, LMParams, NormalSystem, SolveStats};
pub use types::{pose_boxminus, pose_boxplus, wrap_angle, CentroidVel, Control2, DiagNoise, Pose2};
pub use world::{EventKind, EventScript, ScriptedEvent, WorldState};

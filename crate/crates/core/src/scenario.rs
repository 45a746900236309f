//! Scenario files: everything needed to reproduce a run, with validation,
//! presets for the corridor experiments, and a stable content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinematics::{robots_from_centroid, Formation, FormationSlot, Phase};
use crate::metrics::{compute_metrics, RunMetrics};
use crate::mission::{run_mission, MissionLog, SolverKind, StepSolver};
use crate::mpc::MpcParams;
use crate::planner::{make_initial_path, Limits, LoopParams, NoiseConfig, NoiseModels, Obstacle, PlanProblem};
use crate::solver::LMParams;
use crate::types::Pose2;
use crate::world::{EventScript, WorldState};

/// Obstacle points of the five-obstacle corridor experiment.
pub const EXPERIMENT1_OBSTACLES: [[f64; 2]; 5] = [[1.0, 0.4], [2.0, -0.4], [3.0, -0.6], [4.0, 0.7], [5.0, 0.4]];

/// Seven corridor obstacles; prefixes give the 1/2/5/7-obstacle sets.
pub const CORRIDOR_OBSTACLES: [[f64; 2]; 7] = [
    [1.0, 0.4],
    [2.0, -0.4],
    [3.0, -0.6],
    [4.0, 0.7],
    [5.0, 0.4],
    [6.0, -0.3],
    [0.0, 0.45],
];

pub fn obstacle_set(points: &[[f64; 2]]) -> Vec<Obstacle> {
    points
        .iter()
        .enumerate()
        .map(|(i, c)| Obstacle {
            id: i as u32,
            center: *c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FormationConfig {
    /// `count` robots evenly spaced on a circle of radius `lever_arm`.
    Circular {
        count: usize,
        lever_arm: f64,
    },
    Slots(Vec<FormationSlot>),
}

impl FormationConfig {
    pub fn build(&self) -> Result<Formation> {
        match self {
            FormationConfig::Circular { count, lever_arm } => Formation::circular(*count, *lever_arm),
            FormationConfig::Slots(slots) => Formation::new(slots.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Label only; excluded from the config hash.
    pub name: String,
    pub start: Pose2,
    pub goal: [f64; 2],
    /// Reference steps `N`.
    pub steps: usize,
    pub ts: f64,
    pub formation: FormationConfig,
    pub obstacles: Vec<Obstacle>,
    pub safety_radius: f64,
    pub limits: Limits,
    pub noise: NoiseConfig,
    pub solver: SolverKind,
    pub lm: LMParams,
    pub mpc_p: MpcParams,
    pub mpc_c: MpcParams,
    #[serde(rename = "loop")]
    pub loop_params: LoopParams,
    pub events: EventScript,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Obstacle-free corridor from (−2, 0) to (7, 0).
    fn default() -> Self {
        ScenarioConfig {
            name: "corridor".into(),
            start: Pose2::new(-2.0, 0.0, 0.0),
            goal: [7.0, 0.0],
            steps: 90,
            ts: 0.1,
            formation: FormationConfig::Circular {
                count: 4,
                lever_arm: 0.35,
            },
            obstacles: Vec::new(),
            safety_radius: 0.5,
            limits: Limits::default(),
            noise: NoiseConfig::default(),
            solver: SolverKind::Ours,
            lm: LMParams::default(),
            mpc_p: MpcParams::penalty(),
            mpc_c: MpcParams::constrained(),
            loop_params: LoopParams::default(),
            events: EventScript::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// The five-obstacle corridor.
    pub fn experiment1() -> Self {
        ScenarioConfig {
            name: "experiment1".into(),
            obstacles: obstacle_set(&EXPERIMENT1_OBSTACLES),
            ..ScenarioConfig::default()
        }
    }

    /// Obstacle-free diagonal run from (0, 0) to (5, 3).
    pub fn diagonal() -> Self {
        ScenarioConfig {
            name: "diagonal".into(),
            start: Pose2::new(0.0, 0.0, 0.0),
            goal: [5.0, 3.0],
            steps: 60,
            ..ScenarioConfig::default()
        }
    }

    /// Corridor with the first `count` of [`CORRIDOR_OBSTACLES`].
    pub fn corridor(count: usize) -> Self {
        ScenarioConfig {
            name: format!("corridor{count}"),
            obstacles: obstacle_set(&CORRIDOR_OBSTACLES[..count.min(CORRIDOR_OBSTACLES.len())]),
            ..ScenarioConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ScenarioConfig::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("ts must be > 0, got {}", self.ts)));
        }
        if !(self.safety_radius > 0.0 && self.safety_radius.is_finite()) {
            return Err(Error::Config(format!(
                "safety_radius must be > 0, got {}",
                self.safety_radius
            )));
        }
        if !self.start.is_finite() || !(self.goal[0].is_finite() && self.goal[1].is_finite()) {
            return Err(Error::Config("start and goal must be finite".into()));
        }
        self.formation
            .build()
            .map_err(|e| Error::Config(format!("formation: {e}")))?;
        NoiseModels::from_config(&self.noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
        self.mpc_p.validate()?;
        self.mpc_c.validate()?;
        self.events.validate()?;
        self.plan_problem()?.validate()
    }

    /// SHA-256 over the canonical JSON of every field except `name`.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("scenario serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("name");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn plan_problem(&self) -> Result<PlanProblem> {
        Ok(PlanProblem {
            reference: make_initial_path(&self.start, self.goal, self.steps, self.ts, self.limits.v_max)?,
            goal: self.goal,
            obstacles: self.obstacles.clone(),
            safety_radius: self.safety_radius,
            formation: self.formation.build()?,
            noise: NoiseModels::from_config(&self.noise)?,
            lm: self.lm,
            limits: self.limits,
            loop_params: self.loop_params,
        })
    }

    /// Robots placed rigidly around the first reference pose, i.e. the start
    /// position facing the goal.
    pub fn world(&self) -> Result<WorldState> {
        let formation = self.formation.build()?;
        let reference = make_initial_path(&self.start, self.goal, self.steps, self.ts, self.limits.v_max)?;
        let robots = robots_from_centroid(&reference.poses[0], &formation, Phase::Translate);
        WorldState::new(robots, self.events.clone(), self.seed)
    }

    pub fn step_solver(&self, kind: SolverKind) -> StepSolver {
        match kind {
            SolverKind::Ours => StepSolver::Ours,
            SolverKind::MpcP => StepSolver::MpcP(self.mpc_p),
            SolverKind::MpcC => StepSolver::MpcC(self.mpc_c),
        }
    }

    /// Runs the mission with the configured solver.
    pub fn run(&self) -> Result<RunOutput> {
        self.run_with(self.solver)
    }

    pub fn run_with(&self, kind: SolverKind) -> Result<RunOutput> {
        let problem = self.plan_problem()?;
        let log = run_mission(&problem, &self.step_solver(kind), self.world()?)?;
        let metrics = compute_metrics(&log, &problem);
        Ok(RunOutput { problem, log, metrics })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub problem: PlanProblem,
    pub log: MissionLog,
    pub metrics: RunMetrics,
}

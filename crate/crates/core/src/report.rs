//! Scalability sweeps and CSV output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::mission::{MissionLog, Outcome, SolverKind};
use crate::planner::Obstacle;
use crate::scenario::{FormationConfig, ScenarioConfig};

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub solver: SolverKind,
    pub run: usize,
    pub robots: usize,
    pub obstacles: usize,
    pub seed: u64,
    pub config_hash: String,
    pub outcome: Option<Outcome>,
    pub metrics: Option<RunMetrics>,
    /// Set when the mission could not be run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub solvers: Vec<SolverKind>,
    pub repeat: usize,
    /// Run missions one at a time so wall-clock timings do not contend.
    pub serial: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            solvers: vec![SolverKind::Ours],
            repeat: 1,
            serial: false,
        }
    }
}

/// Runs one mission and records its metrics, or the error that stopped it.
pub fn run_row(cfg: &ScenarioConfig, solver: SolverKind, run: usize) -> RunRow {
    let robots = cfg.formation.build().map_or(0, |f| f.len());
    let mut row = RunRow {
        scenario: cfg.name.clone(),
        solver,
        run,
        robots,
        obstacles: cfg.obstacles.len(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        outcome: None,
        metrics: None,
        error: None,
    };
    match cfg.run_with(solver) {
        Ok(out) => {
            row.outcome = Some(out.log.outcome);
            row.metrics = Some(out.metrics);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every (scenario, solver, repetition) job; rows come back in job
/// order regardless of how they were scheduled.
pub fn run_table(configs: &[ScenarioConfig], opts: &SweepOptions) -> Vec<RunRow> {
    let jobs: Vec<(&ScenarioConfig, SolverKind, usize)> = configs
        .iter()
        .flat_map(|c| {
            opts.solvers
                .iter()
                .flat_map(move |s| (0..opts.repeat.max(1)).map(move |r| (c, *s, r)))
        })
        .collect();
    if opts.serial {
        jobs.iter().map(|(c, s, r)| run_row(c, *s, *r)).collect()
    } else {
        jobs.par_iter().map(|(c, s, r)| run_row(c, *s, *r)).collect()
    }
}

/// Same centroid problem with a circular formation of each size.
pub fn robot_sweep_configs(base: &ScenarioConfig, counts: &[usize]) -> Vec<ScenarioConfig> {
    let lever_arm = match base.formation {
        FormationConfig::Circular { lever_arm, .. } => lever_arm,
        FormationConfig::Slots(ref s) => s.first().map_or(0.35, |s| s.l()),
    };
    counts
        .iter()
        .map(|&count| ScenarioConfig {
            name: format!("{}-robots{count}", base.name),
            formation: FormationConfig::Circular { count, lever_arm },
            ..base.clone()
        })
        .collect()
}

pub fn obstacle_sweep_configs(base: &ScenarioConfig, sets: &[Vec<Obstacle>]) -> Vec<ScenarioConfig> {
    sets.iter()
        .map(|set| ScenarioConfig {
            name: format!("{}-obstacles{}", base.name, set.len()),
            obstacles: set.clone(),
            ..base.clone()
        })
        .collect()
}

pub fn sweep_robots(base: &ScenarioConfig, counts: &[usize], opts: &SweepOptions) -> Vec<RunRow> {
    run_table(&robot_sweep_configs(base, counts), opts)
}

pub fn sweep_obstacles(base: &ScenarioConfig, sets: &[Vec<Obstacle>], opts: &SweepOptions) -> Vec<RunRow> {
    run_table(&obstacle_sweep_configs(base, sets), opts)
}

pub const CSV_HEADER: [&str; 19] = [
    "scenario",
    "solver",
    "run",
    "robots",
    "obstacles",
    "seed",
    "config_hash",
    "outcome",
    "avg_deviation",
    "max_inter_robot_error",
    "mean_opt_time",
    "mean_step_time",
    "path_length",
    "dist_to_goal",
    "min_clearance",
    "steps",
    "events_seen",
    "error",
    "status",
];

/// Nine significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::ReachedGoal => "reached_goal",
        Outcome::HorizonEnd => "horizon_end",
        Outcome::AllRobotsFailed => "all_robots_failed",
    }
}

fn parse_outcome(s: &str) -> Option<Outcome> {
    match s {
        "reached_goal" => Some(Outcome::ReachedGoal),
        "horizon_end" => Some(Outcome::HorizonEnd),
        "all_robots_failed" => Some(Outcome::AllRobotsFailed),
        _ => None,
    }
}

fn row_record(r: &RunRow) -> Vec<String> {
    let mut rec = vec![
        r.scenario.clone(),
        r.solver.name().to_string(),
        r.run.to_string(),
        r.robots.to_string(),
        r.obstacles.to_string(),
        r.seed.to_string(),
        r.config_hash.clone(),
        r.outcome.map_or(String::new(), |o| outcome_name(o).to_string()),
    ];
    match &r.metrics {
        Some(m) => {
            rec.extend(
                [
                    m.avg_deviation,
                    m.max_inter_robot_error,
                    m.mean_opt_time,
                    m.mean_step_time,
                    m.path_length,
                    m.dist_to_goal,
                    m.min_clearance,
                ]
                .map(format_float),
            );
            rec.push(m.steps.to_string());
            rec.push(m.events_seen.to_string());
        }
        None => rec.extend(std::iter::repeat_n(String::new(), 9)),
    }
    rec.push(r.error.clone().unwrap_or_default());
    rec.push(if r.error.is_some() { "failed" } else { "ok" }.to_string());
    rec
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the header and one row per run.
pub fn emit_csv(rows: &[RunRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(row_record(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rd.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected CSV header", path.display())));
    }
    let bad = |what: &str| Error::Config(format!("{}: malformed {what}", path.display()));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let float = |i: usize| f(i).parse::<f64>().map_err(|_| bad(CSV_HEADER[i]));
        let int = |i: usize| f(i).parse::<usize>().map_err(|_| bad(CSV_HEADER[i]));
        let metrics = if f(8).is_empty() {
            None
        } else {
            Some(RunMetrics {
                avg_deviation: float(8)?,
                max_inter_robot_error: float(9)?,
                mean_opt_time: float(10)?,
                mean_step_time: float(11)?,
                path_length: float(12)?,
                dist_to_goal: float(13)?,
                min_clearance: float(14)?,
                steps: int(15)?,
                events_seen: int(16)?,
            })
        };
        rows.push(RunRow {
            scenario: f(0).to_string(),
            solver: f(1).parse()?,
            run: int(2)?,
            robots: int(3)?,
            obstacles: int(4)?,
            seed: f(5).parse().map_err(|_| bad("seed"))?,
            config_hash: f(6).to_string(),
            outcome: parse_outcome(f(7)),
            metrics,
            error: (!f(17).is_empty()).then(|| f(17).to_string()),
        });
    }
    Ok(rows)
}

/// Per-step trajectory: step, reference index, centroid pose, then every
/// robot's pose, for external plotting.
pub fn write_trajectory(log: &MissionLog, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let robots = log.snapshots.first().map_or(0, |s| s.robots.len());
    let mut header = String::from("step,ref_index,phase,cx,cy,ctheta");
    for i in 0..robots {
        header.push_str(&format!(",x{i},y{i},theta{i}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for (step, s) in log.snapshots.iter().enumerate() {
        let phase = log
            .records
            .get(step)
            .map_or("end", |r| if r.phase.is_rotate() { "rotate" } else { "translate" });
        let mut line = format!(
            "{step},{},{phase},{},{},{}",
            s.ref_index,
            format_float(s.centroid.x()),
            format_float(s.centroid.y()),
            format_float(s.centroid.theta())
        );
        for p in &s.robots {
            line.push_str(&format!(
                ",{},{},{}",
                format_float(p.x()),
                format_float(p.y()),
                format_float(p.theta())
            ));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

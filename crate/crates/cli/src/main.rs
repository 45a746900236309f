use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cotransport::report::{obstacle_sweep_configs, robot_sweep_configs, run_table, write_trajectory};
use cotransport::scenario::{obstacle_set, CORRIDOR_OBSTACLES};
use cotransport::{emit_csv, RunRow, ScenarioConfig, SolverKind, SweepOptions};

mod selftest;

#[derive(Parser)]
#[command(
    name = "cotransport",
    version,
    about = "Multi-robot rigid payload transport: planning, baselines and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Write one CSV row per run to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs per (scenario, solver).
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Run missions one at a time for uncontended timings.
    #[arg(long)]
    serial_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission.
    Run {
        scenario: PathBuf,
        /// Solver to use instead of the one in the scenario.
        #[arg(long)]
        solver: Option<SolverKind>,
        /// Dump the executed trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Same centroid problem with growing robot counts.
    SweepRobots {
        /// Base scenario; the five-obstacle corridor by default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64,128")]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "ours")]
        solvers: Vec<SolverKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Same corridor with growing obstacle counts.
    SweepObstacles {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Prefix lengths of the built-in seven-obstacle corridor set.
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,7")]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "ours,mpc_p,mpc_c")]
        solvers: Vec<SolverKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one scenario with several solvers.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ours,mpc_p,mpc_c")]
        solvers: Vec<SolverKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Print a built-in scenario as JSON.
    Preset {
        /// experiment1, corridor or diagonal
        name: String,
    },
    /// Quick numerical and end-to-end checks.
    Selftest,
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::experiment1(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn preset(name: &str) -> Result<ScenarioConfig> {
    Ok(match name {
        "experiment1" => ScenarioConfig::experiment1(),
        "corridor" => ScenarioConfig::default(),
        "diagonal" => ScenarioConfig::diagonal(),
        other => bail!("unknown preset {other:?} (experiment1, corridor, diagonal)"),
    })
}

fn print_rows(rows: &[RunRow]) {
    println!(
        "{:<28} {:<6} {:>3} {:>6} {:>4} {:>10} {:>10} {:>10} {:>9} {:>9} {:>9} {:>5}",
        "scenario",
        "solver",
        "run",
        "robots",
        "obst",
        "avg_dev",
        "inter_err",
        "opt_ms",
        "path",
        "to_goal",
        "clear",
        "steps"
    );
    for r in rows {
        match (&r.metrics, &r.error) {
            (Some(m), _) => println!(
                "{:<28} {:<6} {:>3} {:>6} {:>4} {:>10.5} {:>10.2e} {:>10.4} {:>9.4} {:>9.4} {:>9.4} {:>5}",
                r.scenario,
                r.solver.name(),
                r.run,
                r.robots,
                r.obstacles,
                m.avg_deviation,
                m.max_inter_robot_error,
                m.mean_opt_time * 1e3,
                m.path_length,
                m.dist_to_goal,
                m.min_clearance,
                m.steps
            ),
            (None, Some(e)) => println!("{:<28} {:<6} {:>3} failed: {e}", r.scenario, r.solver.name(), r.run),
            (None, None) => {}
        }
    }
}

fn finish(rows: Vec<RunRow>, common: &Common) -> Result<()> {
    print_rows(&rows);
    if let Some(out) = &common.out {
        emit_csv(&rows, out)?;
        eprintln!("wrote {}", out.display());
    }
    if rows.iter().any(|r| r.error.is_some()) {
        bail!("some runs failed");
    }
    Ok(())
}

fn options(solvers: Vec<SolverKind>, common: &Common) -> SweepOptions {
    SweepOptions {
        solvers,
        repeat: common.repeat,
        serial: common.serial_timing,
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            solver,
            trajectory,
            common,
        } => {
            let cfg = load(Some(&scenario), common.seed)?;
            let kind = solver.unwrap_or(cfg.solver);
            if let Some(path) = trajectory {
                let out = cfg.run_with(kind)?;
                write_trajectory(&out.log, &path)?;
                eprintln!("wrote {}", path.display());
            }
            let opts = SweepOptions {
                serial: true,
                ..options(vec![kind], &common)
            };
            finish(run_table(&[cfg], &opts), &common)
        }
        Command::SweepRobots {
            scenario,
            counts,
            solvers,
            common,
        } => {
            let base = load(scenario.as_deref(), common.seed)?;
            let configs = robot_sweep_configs(&base, &counts);
            finish(run_table(&configs, &options(solvers, &common)), &common)
        }
        Command::SweepObstacles {
            scenario,
            counts,
            solvers,
            common,
        } => {
            let base = load(scenario.as_deref(), common.seed)?;
            if let Some(c) = counts.iter().find(|c| **c > CORRIDOR_OBSTACLES.len()) {
                bail!(
                    "at most {} obstacles available, asked for {c}",
                    CORRIDOR_OBSTACLES.len()
                );
            }
            let sets: Vec<_> = counts.iter().map(|&c| obstacle_set(&CORRIDOR_OBSTACLES[..c])).collect();
            let configs = obstacle_sweep_configs(&base, &sets);
            finish(run_table(&configs, &options(solvers, &common)), &common)
        }
        Command::Compare {
            scenario,
            solvers,
            common,
        } => {
            let cfg = load(Some(&scenario), common.seed)?;
            finish(run_table(&[cfg], &options(solvers, &common)), &common)
        }
        Command::Preset { name } => {
            println!("{}", preset(&name)?.to_json());
            Ok(())
        }
        Command::Selftest => selftest::run(),
    }
}

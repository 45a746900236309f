//! Independent oracles shared by the integration tests and the acceptance
//! run. Each sweep returns its worst deviation; callers apply tolerances.
#![allow(dead_code)]

use cotransport::graph::Variable;
use cotransport::kinematics::propagate_robot;
use cotransport::scenario::obstacle_set;
use cotransport::{
    build_step_graph, lm_optimize, pose_boxplus, total_error, wrap_angle, Control2, DiagNoise, Factor, FactorGraph,
    Key, LMParams, PlanProblem, Pose2, ScenarioConfig, Values,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

pub fn perturb(v: &Variable, axis: usize, step: f64) -> Variable {
    match v {
        Variable::Pose(p) => {
            let mut d = Vector3::zeros();
            d[axis] = step;
            Variable::Pose(pose_boxplus(p, &d))
        }
        Variable::Control(u) => {
            let mut c = [u.v, u.omega];
            c[axis] += step;
            Variable::Control(Control2::new(c[0], c[1]))
        }
    }
}

/// Largest relative deviation over all blocks, measured as
/// `‖J − J_fd‖_max / max(1, ‖J_fd‖_max)`.
pub fn jacobian_deviation(f: &Factor, vars: &[Variable]) -> f64 {
    let refs: Vec<&Variable> = vars.iter().collect();
    let r = f.evaluate(&refs).unwrap();
    let mut worst: f64 = 0.0;
    for (b, var) in vars.iter().enumerate() {
        let analytic = r.jacobian(b);
        let mut numeric = DMatrix::zeros(r.dim(), var.dim());
        for c in 0..var.dim() {
            let eval = |step: f64| {
                let mut moved = vars.to_vec();
                moved[b] = perturb(var, c, step);
                let refs: Vec<&Variable> = moved.iter().collect();
                f.evaluate(&refs).unwrap().value().to_vec()
            };
            let (plus, minus) = (eval(H), eval(-H));
            for row in 0..r.dim() {
                numeric[(row, c)] = (plus[row] - minus[row]) / (2.0 * H);
            }
        }
        let scale = numeric.amax().max(1.0);
        worst = worst.max((analytic - numeric).amax() / scale);
    }
    worst
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose2 {
    Pose2::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-3.0..3.0),
    )
}

pub fn random_control(rng: &mut ChaCha8Rng) -> Control2 {
    Control2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
}

pub fn random_noise(rng: &mut ChaCha8Rng, dim: usize) -> DiagNoise {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(1e-3..1.0)).collect();
    DiagNoise::from_variances(&v).unwrap()
}

/// Residual angle kept away from the ±π cut so differences stay smooth.
pub fn near(rng: &mut ChaCha8Rng, p: &Pose2, spread: f64) -> Pose2 {
    Pose2::new(
        p.x() + rng.random_range(-spread..spread),
        p.y() + rng.random_range(-spread..spread),
        p.theta() + rng.random_range(-2.5..2.5),
    )
}

/// Worst relative Jacobian deviation over `rounds` draws of every factor
/// kind, and the number of factor evaluations checked.
pub fn jacobian_sweep(seed: u64, rounds: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        let x = random_pose(&mut rng);
        let f = Factor::pose_prior(0, near(&mut rng, &x, 2.0), random_noise(&mut rng, 3)).unwrap();
        worst = worst.max(jacobian_deviation(&f, &[Variable::Pose(x)]));

        let f = Factor::anchor(0, near(&mut rng, &x, 0.01));
        worst = worst.max(jacobian_deviation(&f, &[Variable::Pose(x)]));

        let u = random_control(&mut rng);
        let f = Factor::control_prior(0, random_control(&mut rng), random_noise(&mut rng, 2)).unwrap();
        worst = worst.max(jacobian_deviation(&f, &[Variable::Control(u)]));

        let dt = rng.random_range(0.01..0.5);
        let f = Factor::motion(0, dt, random_noise(&mut rng, 3)).unwrap();
        let next = near(&mut rng, &x, 0.5);
        worst = worst.max(jacobian_deviation(
            &f,
            &[Variable::Pose(x), Variable::Control(u), Variable::Pose(next)],
        ));

        // Obstacle inside the bubble, away from the hinge and the center.
        let radius = rng.random_range(0.2..1.0);
        let dist = rng.random_range(0.05..0.95) * radius;
        let angle: f64 = rng.random_range(-3.0..3.0);
        let center = [x.x() - dist * angle.cos(), x.y() - dist * angle.sin()];
        let f = Factor::obstacle(0, center, radius, random_noise(&mut rng, 1)).unwrap();
        worst = worst.max(jacobian_deviation(&f, &[Variable::Pose(x)]));
        evaluations += 5;
    }
    (worst, evaluations)
}

pub fn problem_with_obstacles() -> PlanProblem {
    let mut cfg = ScenarioConfig::experiment1();
    cfg.steps = 30;
    cfg.goal = [1.0, 0.0];
    cfg.plan_problem().unwrap()
}

/// Cost of the step-`k` window written out term by term from the model:
/// Mahalanobis norms of pose, control, motion and obstacle terms, plus the
/// anchor. Shares no code with the factor implementations.
pub fn assembled_cost(p: &PlanProblem, k: usize, current: &Pose2, values: &Values) -> f64 {
    let n = p.steps();
    let wrap = |a: f64| a.sin().atan2(a.cos());
    let maha = |raw: &[f64], var: &[f64]| -> f64 { raw.iter().zip(var).map(|(r, s)| r * r / s).sum() };
    let pose_diff = |a: &Pose2, b: &Pose2| [a.x() - b.x(), a.y() - b.y(), wrap(a.theta() - b.theta())];
    let noise = &p.noise;
    let mut cost = maha(&pose_diff(&values.pose(k).unwrap(), current), &[1e-12; 3]);
    for i in k..=n {
        let x = values.pose(i).unwrap();
        let var = if i == n {
            noise.terminal.variances()
        } else {
            noise.state.variances()
        };
        cost += maha(&pose_diff(&x, &p.reference.poses[i]), var);
        if i < n {
            let u = values.control(i).unwrap();
            let r = &p.reference.controls[i];
            cost += maha(&[u.v - r.v, u.omega - r.omega], noise.control.variances());
            let ts = p.reference.ts;
            let moved = Pose2::new(
                x.x() + ts * u.v * x.theta().cos(),
                x.y() + ts * u.v * x.theta().sin(),
                x.theta() + ts * u.omega,
            );
            cost += maha(
                &pose_diff(&moved, &values.pose(i + 1).unwrap()),
                noise.motion.variances(),
            );
        }
        if i > k {
            for o in &p.obstacles {
                let d = ((x.x() - o.center[0]).powi(2) + (x.y() - o.center[1]).powi(2)).sqrt();
                let hinge = if d < p.safety_radius {
                    1.0 - d / p.safety_radius
                } else {
                    0.0
                };
                cost += maha(&[hinge], noise.obstacle.variances());
            }
        }
    }
    cost
}

pub fn jitter(rng: &mut ChaCha8Rng, values: &Values, graph: &FactorGraph, scale: f64) -> Values {
    let mut out = Values::new();
    for slot in graph.variables() {
        match (slot.key, values.get(&slot.key).unwrap()) {
            (Key::Pose(i), Variable::Pose(p)) => out.insert_pose(
                i,
                Pose2::new(
                    p.x() + rng.random_range(-scale..scale),
                    p.y() + rng.random_range(-scale..scale),
                    p.theta() + rng.random_range(-scale..scale),
                ),
            ),
            (Key::Control(i), Variable::Control(u)) => out.insert_control(
                i,
                Control2::new(
                    u.v + rng.random_range(-scale..scale),
                    u.omega + rng.random_range(-scale..scale),
                ),
            ),
            _ => unreachable!(),
        }
    }
    out
}

/// Largest relative gap between the graph cost and the assembled
/// objective over `trials` random windows and values.
pub fn cost_sweep(seed: u64, trials: usize) -> f64 {
    let p = problem_with_obstacles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let k = trial % 20;
        let current = Pose2::new(
            p.reference.poses[k].x() + rng.random_range(-0.3..0.3),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let (graph, init) = build_step_graph(&p, k, &current).unwrap();
        let values = jitter(&mut rng, &init, &graph, 0.3);
        let expected = assembled_cost(&p, k, &current, &values);
        let got = total_error(&graph, &values).unwrap();
        worst = worst.max((got - expected).abs() / expected.abs().max(1e-300));
    }
    worst
}

/// Pose and control priors only: the cost is exactly quadratic, so the
/// minimizer is the solution of the stacked whitened linear system. Returns
/// the largest deviation of the LM solution from it.
pub fn lsq_sweep(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let poses = rng.random_range(1..5);
        let controls = rng.random_range(0..4);
        let mut graph = FactorGraph::new();
        let mut init = Values::new();
        for i in 0..poses {
            graph.add_variable(Key::Pose(i));
            init.insert_pose(i, Pose2::identity());
        }
        for i in 0..controls {
            graph.add_variable(Key::Control(i));
            init.insert_control(i, Control2::new(0.0, 0.0));
        }
        let dim = graph.dim();
        let mut rows: Vec<(usize, f64, f64)> = Vec::new(); // (column, weight, target)
        for slot in graph.variables().to_vec() {
            for _ in 0..rng.random_range(1..4) {
                let var: Vec<f64> = (0..slot.dim).map(|_| rng.random_range(0.01..2.0)).collect();
                let target: Vec<f64> = (0..slot.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let noise = DiagNoise::from_variances(&var).unwrap();
                let factor = match slot.key {
                    Key::Pose(i) => Factor::pose_prior(i, Pose2::new(target[0], target[1], target[2]), noise),
                    Key::Control(i) => Factor::control_prior(i, Control2::new(target[0], target[1]), noise),
                }
                .unwrap();
                graph.add_factor(factor).unwrap();
                for a in 0..slot.dim {
                    rows.push((slot.offset + a, 1.0 / var[a].sqrt(), target[a]));
                }
            }
        }
        let mut a = DMatrix::zeros(rows.len(), dim);
        let mut b = DVector::zeros(rows.len());
        for (r, (col, w, t)) in rows.iter().enumerate() {
            a[(r, *col)] = *w;
            b[r] = w * t;
        }
        let direct = a.svd(true, true).solve(&b, 1e-14).unwrap();

        let (sol, _) = lm_optimize(&graph, &init, &LMParams::tight()).unwrap();
        for slot in graph.variables() {
            let got: Vec<f64> = match sol.get(&slot.key).unwrap() {
                Variable::Pose(p) => vec![p.x(), p.y(), p.theta()],
                Variable::Control(u) => vec![u.v, u.omega],
            };
            for (i, g) in got.iter().enumerate() {
                let want = direct[slot.offset + i];
                worst = worst.max((g - want).abs());
            }
        }
    }
    worst
}

pub fn short_problem(steps: usize, obstacles: &[[f64; 2]]) -> PlanProblem {
    let cfg = ScenarioConfig {
        steps,
        goal: [-2.0 + 0.1 * steps as f64, 0.0],
        obstacles: obstacle_set(obstacles),
        ..ScenarioConfig::default()
    };
    cfg.plan_problem().unwrap()
}

/// Independent cost of the last-step window `(x_{N−1} fixed, u, x_N)`.
pub fn last_step_cost(p: &PlanProblem, current: &Pose2, z: &[f64; 5]) -> f64 {
    let n = p.steps();
    let ts = p.reference.ts;
    let (v, w) = (z[0], z[1]);
    let wrap = |a: f64| a.sin().atan2(a.cos());
    let r_u = p.reference.controls[n - 1];
    let r_x = p.reference.poses[n];
    let mut cost = 0.0;
    let cv = p.noise.control.variances();
    cost += (v - r_u.v).powi(2) / cv[0] + (w - r_u.omega).powi(2) / cv[1];
    let moved = [
        current.x() + ts * v * current.theta().cos(),
        current.y() + ts * v * current.theta().sin(),
        current.theta() + ts * w,
    ];
    let mv = p.noise.motion.variances();
    let tv = p.noise.terminal.variances();
    let target = [r_x.x(), r_x.y(), r_x.theta()];
    for a in 0..3 {
        let dm = if a == 2 {
            wrap(moved[a] - z[2 + a])
        } else {
            moved[a] - z[2 + a]
        };
        let dt = if a == 2 {
            wrap(z[2 + a] - target[a])
        } else {
            z[2 + a] - target[a]
        };
        cost += dm * dm / mv[a] + dt * dt / tv[a];
    }
    for o in &p.obstacles {
        let d = ((z[2] - o.center[0]).powi(2) + (z[3] - o.center[1]).powi(2)).sqrt();
        if d < p.safety_radius {
            cost += (1.0 - d / p.safety_radius).powi(2) / p.noise.obstacle.variances()[0];
        }
    }
    cost
}

/// Coarse grid over the controls (with the pose placed at the best
/// weighted compromise), then compass search over all five unknowns.
pub fn grid_and_polish(p: &PlanProblem, current: &Pose2) -> [f64; 5] {
    let cost = |z: &[f64; 5]| last_step_cost(p, current, z);
    let r_x = p.reference.poses[p.steps()];
    let mv = p.noise.motion.variances();
    let tv = p.noise.terminal.variances();
    let ts = p.reference.ts;
    let pose_for = |v: f64, w: f64| {
        let moved = [
            current.x() + ts * v * current.theta().cos(),
            current.y() + ts * v * current.theta().sin(),
            current.theta() + ts * w,
        ];
        let target = [r_x.x(), r_x.y(), r_x.theta()];
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (moved[a] / mv[a] + target[a] / tv[a]) / (1.0 / mv[a] + 1.0 / tv[a]);
        }
        out
    };
    let mut best = [0.0; 5];
    let mut best_cost = f64::INFINITY;
    for i in 0..=120 {
        for j in 0..=120 {
            let v = -3.0 + 6.0 * i as f64 / 120.0;
            let w = -3.0 + 6.0 * j as f64 / 120.0;
            let x = pose_for(v, w);
            let z = [v, w, x[0], x[1], x[2]];
            let c = cost(&z);
            if c < best_cost {
                best = z;
                best_cost = c;
            }
        }
    }
    let mut step = 0.05;
    while step > 1e-12 {
        let mut improved = false;
        for a in 0..5 {
            for s in [step, -step] {
                let mut z = best;
                z[a] += s;
                let c = cost(&z);
                if c < best_cost {
                    best = z;
                    best_cost = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Largest deviation of the last-step solve from the grid-and-polish oracle
/// over a few displaced starts, with and without an active obstacle.
pub fn grid_polish_sweep() -> f64 {
    let mut worst: f64 = 0.0;
    let base = short_problem(5, &[]);
    let with_obstacle = short_problem(5, &[[-1.45, 0.2]]);
    for (p, current) in [
        (&base, Pose2::new(-1.65, 0.12, 0.2)),
        (&base, Pose2::new(-1.5, -0.3, -0.4)),
        (&with_obstacle, Pose2::new(-1.62, 0.05, 0.1)),
    ] {
        let n = p.steps();
        let (graph, init) = build_step_graph(p, n - 1, &current).unwrap();
        let (sol, _) = lm_optimize(&graph, &init, &LMParams::tight()).unwrap();
        let u = sol.control(n - 1).unwrap();
        let x = sol.pose(n).unwrap();
        let oracle = grid_and_polish(p, &current);
        let got = [u.v, u.omega, x.x(), x.y(), x.theta()];
        for a in 0..5 {
            worst = worst.max((got[a] - oracle[a]).abs());
        }
    }
    worst
}

/// Forward-Euler integration of the unicycle ODE with `substeps` substeps.
pub fn euler(x: &Pose2, u: &Control2, ts: f64, substeps: usize) -> [f64; 3] {
    let dt = ts / substeps as f64;
    let (mut px, mut py, mut th) = (x.x(), x.y(), x.theta());
    for _ in 0..substeps {
        px += dt * u.v * th.cos();
        py += dt * u.v * th.sin();
        th += dt * u.omega;
    }
    [px, py, th]
}

/// Worst position and heading error of the robot step against 1000-substep
/// Euler over a grid of headings and controls within unit bounds.
pub fn euler_sweep() -> (f64, f64) {
    let mut worst_heading: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for th in [-3.0, -1.2, 0.0, 0.7, 2.9] {
        for v in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            for w in [-1.0, -0.4, 0.0, 0.6, 1.0] {
                let x = Pose2::new(0.3, -0.2, th);
                let u = Control2::new(v, w);
                let got = propagate_robot(&x, &u, 0.1).unwrap();
                let fine = euler(&x, &u, 0.1, 1000);
                worst = worst.max((got.x() - fine[0]).hypot(got.y() - fine[1]));
                worst_heading = worst_heading.max(wrap_angle(got.theta() - fine[2]).abs());
            }
        }
    }
    (worst, worst_heading)
}

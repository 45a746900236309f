//! Fast end-to-end sanity checks runnable on any machine.

use anyhow::{bail, Result};
use cotransport::quasi_newton::numeric_gradient;
use cotransport::{Control2, Factor, Pose2, ScenarioConfig, SolverKind, Variable};
use nalgebra::DVector;

fn check(name: &str, ok: bool, detail: String, failures: &mut usize) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        *failures += 1;
    }
}

fn motion_jacobian_error() -> f64 {
    let noise = cotransport::DiagNoise::from_variances(&[1e-4, 1e-4, 2e-5]).expect("valid");
    let f = Factor::motion(0, 0.1, noise).expect("valid");
    let x = Pose2::new(0.3, -0.2, 0.7);
    let u = Control2::new(0.9, -0.4);
    let xn = Pose2::new(0.38, -0.14, 0.66);
    let r = f.eval_motion(&x, &u, &xn).expect("motion residual");
    let mut worst: f64 = 0.0;
    for row in 0..3 {
        let at = |z: &DVector<f64>| {
            let xv = Variable::Pose(Pose2::new(z[0], z[1], z[2]));
            let uv = Variable::Control(Control2::new(z[3], z[4]));
            let nv = Variable::Pose(Pose2::new(z[5], z[6], z[7]));
            f.evaluate(&[&xv, &uv, &nv]).expect("residual").value()[row]
        };
        let z0 = DVector::from_vec(vec![x.x(), x.y(), x.theta(), u.v, u.omega, xn.x(), xn.y(), xn.theta()]);
        let num = numeric_gradient(at, &z0, 1e-6).expect("positive step");
        let analytic: Vec<f64> = (0..3)
            .flat_map(|b| {
                let j = r.jacobian(b);
                (0..j.ncols()).map(move |c| j[(row, c)]).collect::<Vec<_>>()
            })
            .collect();
        for (a, n) in analytic.iter().zip(num.iter()) {
            worst = worst.max((a - n).abs() / n.abs().max(1.0));
        }
    }
    worst
}

pub fn run() -> Result<()> {
    let mut failures = 0;

    let err = motion_jacobian_error();
    check(
        "motion jacobian",
        err <= 1e-5,
        format!("max relative error {err:.2e}"),
        &mut failures,
    );

    let free = ScenarioConfig::default().run_with(SolverKind::Ours)?;
    check(
        "obstacle-free corridor",
        free.metrics.dist_to_goal <= 0.06 && free.metrics.avg_deviation <= 1e-6,
        format!(
            "distance to goal {:.4} m, average deviation {:.2e} m",
            free.metrics.dist_to_goal, free.metrics.avg_deviation
        ),
        &mut failures,
    );

    let exp = ScenarioConfig::experiment1().run_with(SolverKind::Ours)?;
    check(
        "five-obstacle corridor",
        exp.metrics.dist_to_goal <= 0.06 && exp.metrics.min_clearance > 0.0,
        format!(
            "distance to goal {:.4} m, min clearance {:.3} m, mean solve {:.3} ms",
            exp.metrics.dist_to_goal,
            exp.metrics.min_clearance,
            exp.metrics.mean_opt_time * 1e3
        ),
        &mut failures,
    );

    if failures > 0 {
        bail!("{failures} self-test check(s) failed");
    }
    Ok(())
}

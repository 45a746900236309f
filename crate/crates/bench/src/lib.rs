//! Shared fixtures for the criterion benchmarks.

use cotransport::{PlanProblem, Pose2, ScenarioConfig};

/// Corridor problem with the first `obstacles` corridor obstacles.
pub fn corridor_problem(obstacles: usize) -> PlanProblem {
    ScenarioConfig::corridor(obstacles)
        .plan_problem()
        .expect("built-in scenario is valid")
}

/// A pose slightly off the reference at step `k`, so solvers have work to do.
pub fn displaced(p: &PlanProblem, k: usize) -> Pose2 {
    let r = p.reference.poses[k];
    Pose2::new(r.x() + 0.02, r.y() + 0.05, r.theta() - 0.03)
}

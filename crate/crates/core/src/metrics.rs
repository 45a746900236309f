//! Evaluation metrics computed from a mission log.

use serde::{Deserialize, Serialize};

use crate::mission::MissionLog;
use crate::planner::PlanProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean distance between executed centroid and the reference pose at the
    /// same index (m).
    pub avg_deviation: f64,
    /// Largest change of any active robot pair's distance from its initial
    /// value (m).
    pub max_inter_robot_error: f64,
    /// Mean solve-plus-distribution time per step (s).
    pub mean_opt_time: f64,
    /// Mean time of a whole loop iteration (s).
    pub mean_step_time: f64,
    pub path_length: f64,
    pub dist_to_goal: f64,
    /// Smallest centroid-to-obstacle distance over the run; infinite without
    /// obstacles (m).
    pub min_clearance: f64,
    pub steps: usize,
    pub events_seen: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of one run. The result depends only on the log and the problem,
/// never on which solver produced the log.
pub fn compute_metrics(log: &MissionLog, p: &PlanProblem) -> RunMetrics {
    let snaps = &log.snapshots;
    let refs = &p.reference.poses;

    let avg_deviation = mean(snaps.iter().map(|s| {
        let r = &refs[s.ref_index.min(refs.len() - 1)];
        s.centroid.distance(r)
    }));

    let mut max_inter_robot_error: f64 = 0.0;
    if let Some(first) = snaps.first() {
        let n = first.robots.len();
        for s in snaps {
            for i in 0..n {
                for j in i + 1..n {
                    if first.failed[i] || first.failed[j] || s.failed[i] || s.failed[j] {
                        continue;
                    }
                    let d0 = first.robots[i].distance(&first.robots[j]);
                    let d = s.robots[i].distance(&s.robots[j]);
                    max_inter_robot_error = max_inter_robot_error.max((d - d0).abs());
                }
            }
        }
    }

    let path_length = snaps.windows(2).map(|w| w[0].centroid.distance(&w[1].centroid)).sum();
    let dist_to_goal = snaps
        .last()
        .map_or(f64::INFINITY, |s| s.centroid.distance_to_point(p.goal));
    let min_clearance = snaps
        .iter()
        .flat_map(|s| p.obstacles.iter().map(move |o| s.centroid.distance_to_point(o.center)))
        .fold(f64::INFINITY, f64::min);

    RunMetrics {
        avg_deviation,
        max_inter_robot_error,
        mean_opt_time: mean(log.records.iter().map(|r| r.opt_time)),
        mean_step_time: mean(log.records.iter().map(|r| r.step_time)),
        path_length,
        dist_to_goal,
        min_clearance,
        steps: log.records.len(),
        events_seen: log.events.len(),
    }
}

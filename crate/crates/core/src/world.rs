//! Deterministic kinematic world: robot poses advanced under applied
//! controls, with scripted disturbances, failures and measurement noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::propagate_robot;
use crate::types::{Control2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// Rigid displacement of the whole assembly; `dtheta` turns it about the
    /// mean position of the active robots.
    Disturb {
        dx: f64,
        dy: f64,
        #[serde(default)]
        dtheta: f64,
    },
    Fail {
        robot: usize,
    },
    NoiseOn {
        sigma_pos: f64,
        sigma_theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    /// Applied right after this many world steps have elapsed.
    pub step: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventScript {
    events: Vec<ScriptedEvent>,
}

impl EventScript {
    pub fn new(events: Vec<ScriptedEvent>) -> Result<Self> {
        let script = EventScript { events };
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Config("event triggers must be strictly increasing".into()));
        }
        for e in &self.events {
            match e.kind {
                EventKind::Disturb { dx, dy, dtheta } => {
                    if !(dx.is_finite() && dy.is_finite() && dtheta.is_finite()) {
                        return Err(Error::Config("disturbance must be finite".into()));
                    }
                }
                EventKind::NoiseOn { sigma_pos, sigma_theta } => {
                    if !(sigma_pos >= 0.0 && sigma_theta >= 0.0) || !(sigma_pos.is_finite() && sigma_theta.is_finite())
                    {
                        return Err(Error::Config("noise levels must be finite and >= 0".into()));
                    }
                }
                EventKind::Fail { .. } => {}
            }
        }
        Ok(())
    }

    pub fn events(&self) -> &[ScriptedEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    robots: Vec<Pose2>,
    failed: Vec<bool>,
    time: f64,
    steps: usize,
    script: EventScript,
    next_event: usize,
    noise: Option<(Normal<f64>, Normal<f64>)>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl WorldState {
    /// Events scheduled at step 0 are applied immediately.
    pub fn new(robots: Vec<Pose2>, script: EventScript, seed: u64) -> Result<Self> {
        if robots.is_empty() {
            return Err(Error::Config("world needs at least one robot".into()));
        }
        script.validate()?;
        for e in script.events() {
            if let EventKind::Fail { robot } = e.kind {
                if robot >= robots.len() {
                    return Err(Error::Config(format!(
                        "failure event names robot {robot} of {}",
                        robots.len()
                    )));
                }
            }
        }
        let mut w = WorldState {
            failed: vec![false; robots.len()],
            robots,
            time: 0.0,
            steps: 0,
            script,
            next_event: 0,
            noise: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        };
        w.apply_due_events();
        Ok(w)
    }

    pub fn robots(&self) -> &[Pose2] {
        &self.robots
    }

    pub fn is_failed(&self, i: usize) -> bool {
        self.failed[i]
    }

    /// `true` for robots that have failed.
    pub fn failed_mask(&self) -> &[bool] {
        &self.failed
    }

    pub fn active_count(&self) -> usize {
        self.failed.iter().filter(|f| !**f).count()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True poses of the active robots.
    pub fn active_poses(&self) -> Vec<(usize, Pose2)> {
        self.robots
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.failed[*i])
            .map(|(i, p)| (i, *p))
            .collect()
    }

    /// Pivots every active robot to its heading, then advances it one step.
    /// Returns the events applied after the motion.
    pub fn step(&mut self, controls: &[Control2], headings: &[f64], ts: f64) -> Result<Vec<ScriptedEvent>> {
        let n = self.robots.len();
        if controls.len() != n || headings.len() != n {
            return Err(Error::Contract(format!(
                "world has {n} robots, got {} controls and {} headings",
                controls.len(),
                headings.len()
            )));
        }
        for i in 0..n {
            if self.failed[i] {
                continue;
            }
            let pivoted = self.robots[i].with_theta(headings[i]);
            self.robots[i] = propagate_robot(&pivoted, &controls[i], ts)?;
        }
        self.time += ts;
        self.steps += 1;
        Ok(self.apply_due_events())
    }

    fn apply_due_events(&mut self) -> Vec<ScriptedEvent> {
        let mut applied = Vec::new();
        while let Some(e) = self.script.events().get(self.next_event).copied() {
            if e.step > self.steps {
                break;
            }
            self.next_event += 1;
            self.apply(&e.kind);
            applied.push(e);
        }
        applied
    }

    fn apply(&mut self, kind: &EventKind) {
        match *kind {
            EventKind::Disturb { dx, dy, dtheta } => {
                let active = self.active_poses();
                if active.is_empty() {
                    return;
                }
                let m = active.len() as f64;
                let cx = active.iter().map(|(_, p)| p.x()).sum::<f64>() / m;
                let cy = active.iter().map(|(_, p)| p.y()).sum::<f64>() / m;
                let (s, c) = dtheta.sin_cos();
                for (i, p) in active {
                    let (rx, ry) = if dtheta == 0.0 {
                        (p.x(), p.y())
                    } else {
                        let (ox, oy) = (p.x() - cx, p.y() - cy);
                        (cx + c * ox - s * oy, cy + s * ox + c * oy)
                    };
                    self.robots[i] = Pose2::new(rx + dx, ry + dy, p.theta() + dtheta);
                }
            }
            EventKind::Fail { robot } => self.failed[robot] = true,
            EventKind::NoiseOn { sigma_pos, sigma_theta } => {
                self.noise = Some((
                    Normal::new(0.0, sigma_pos).expect("validated sigma"),
                    Normal::new(0.0, sigma_theta).expect("validated sigma"),
                ));
            }
        }
    }

    /// Active robots' poses, perturbed by Gaussian noise once enabled.
    pub fn observe(&mut self) -> Vec<(usize, Pose2)> {
        let mut obs = self.active_poses();
        if let Some((pos, ang)) = self.noise {
            for (_, p) in obs.iter_mut() {
                let nx = pos.sample(&mut self.rng);
                let ny = pos.sample(&mut self.rng);
                let nt = ang.sample(&mut self.rng);
                *p = Pose2::new(p.x() + nx, p.y() + ny, p.theta() + nt);
            }
        }
        obs
    }
}

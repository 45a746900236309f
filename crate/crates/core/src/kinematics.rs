//! Unicycle motion models for robots and payload centroid, the
//! translate/rotate phase split, and the mapping from a centroid control to
//! per-robot controls and headings.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap_angle, CentroidVel, Control2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationDir {
    /// Counter-clockwise, `+1`.
    Ccw,
    /// Clockwise, `-1`.
    Cw,
}

impl RotationDir {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            RotationDir::Ccw => 1.0,
            RotationDir::Cw => -1.0,
        }
    }

    /// Direction of a signed rate; zero counts as counter-clockwise.
    pub fn of(rate: f64) -> Self {
        if rate < 0.0 {
            RotationDir::Cw
        } else {
            RotationDir::Ccw
        }
    }
}

/// Centroid motion is either a pure translation or a pure in-place rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Translate,
    Rotate(RotationDir),
}

impl Phase {
    pub fn is_rotate(&self) -> bool {
        matches!(self, Phase::Rotate(_))
    }
}

/// Rigid placement of one robot under the payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SlotRepr", into = "SlotRepr")]
pub struct FormationSlot {
    l: f64,
    psi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotRepr {
    l: f64,
    psi: f64,
}

impl TryFrom<SlotRepr> for FormationSlot {
    type Error = Error;
    fn try_from(r: SlotRepr) -> Result<Self> {
        FormationSlot::new(r.l, r.psi)
    }
}

impl From<FormationSlot> for SlotRepr {
    fn from(s: FormationSlot) -> Self {
        SlotRepr { l: s.l, psi: s.psi }
    }
}

impl FormationSlot {
    pub fn new(l: f64, psi: f64) -> Result<Self> {
        if !l.is_finite() || !psi.is_finite() {
            return Err(Error::NonFinite("formation slot"));
        }
        if l < 0.0 {
            return Err(Error::Domain(format!("lever arm must be >= 0, got {l}")));
        }
        Ok(FormationSlot {
            l,
            psi: wrap_angle(psi),
        })
    }

    #[inline]
    pub fn l(&self) -> f64 {
        self.l
    }

    #[inline]
    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// Contact point in the centroid frame.
    #[inline]
    pub fn offset(&self) -> [f64; 2] {
        [self.l * self.psi.cos(), self.l * self.psi.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FormationSlot>", into = "Vec<FormationSlot>")]
pub struct Formation {
    slots: Vec<FormationSlot>,
}

impl TryFrom<Vec<FormationSlot>> for Formation {
    type Error = Error;
    fn try_from(slots: Vec<FormationSlot>) -> Result<Self> {
        Formation::new(slots)
    }
}

impl From<Formation> for Vec<FormationSlot> {
    fn from(f: Formation) -> Self {
        f.slots
    }
}

impl Formation {
    pub fn new(slots: Vec<FormationSlot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Domain("formation needs at least one robot".into()));
        }
        Ok(Formation { slots })
    }

    /// `count` robots evenly spaced on a circle of radius `l`, `ψ_i = 2πi/count`.
    pub fn circular(count: usize, l: f64) -> Result<Self> {
        let slots = (0..count)
            .map(|i| FormationSlot::new(l, TAU * i as f64 / count as f64))
            .collect::<Result<Vec<_>>>()?;
        Formation::new(slots)
    }

    pub fn slots(&self) -> &[FormationSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

fn check_step(ts: f64) -> Result<()> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::Domain(format!("time step must be > 0, got {ts}")));
    }
    Ok(())
}

/// Robot unicycle step with the second-order midpoint heading.
pub fn propagate_robot(x: &Pose2, u: &Control2, ts: f64) -> Result<Pose2> {
    check_step(ts)?;
    let mid = x.theta() + 0.5 * u.omega * ts;
    Ok(Pose2::new(
        x.x() + ts * u.v * mid.cos(),
        x.y() + ts * u.v * mid.sin(),
        x.theta() + ts * u.omega,
    ))
}

/// Centroid step: heading held at its start value over the step.
pub fn propagate_centroid(x: &Pose2, u: &Control2, ts: f64) -> Result<Pose2> {
    check_step(ts)?;
    Ok(centroid_step(x, u, ts))
}

#[inline]
pub(crate) fn centroid_step(x: &Pose2, u: &Control2, ts: f64) -> Pose2 {
    let (s, c) = x.theta().sin_cos();
    Pose2::new(x.x() + ts * u.v * c, x.y() + ts * u.v * s, x.theta() + ts * u.omega)
}

pub fn propagate_centroid_vel(x: &Pose2, v: &CentroidVel, ts: f64) -> Result<Pose2> {
    check_step(ts)?;
    Ok(Pose2::new(
        x.x() + ts * v.xdot,
        x.y() + ts * v.ydot,
        x.theta() + ts * v.thetadot,
    ))
}

/// Speed magnitude signed by the projection onto the heading.
pub fn vel_to_control(x: &Pose2, v: &CentroidVel) -> Control2 {
    let speed = v.xdot.hypot(v.ydot);
    let along = v.xdot * x.theta().cos() + v.ydot * x.theta().sin();
    let sign = if along >= 0.0 { 1.0 } else { -1.0 };
    Control2::new(sign * speed, v.thetadot)
}

/// Heading a robot pivots to before applying its control.
///
/// While rotating, robots face along the tangent of their arc in the
/// direction of travel, so they always drive forward.
pub fn required_robot_heading(centroid_theta: f64, slot: &FormationSlot, phase: Phase) -> f64 {
    match phase {
        Phase::Translate => wrap_angle(centroid_theta),
        Phase::Rotate(dir) => wrap_angle(centroid_theta + slot.psi() + dir.sign() * FRAC_PI_2),
    }
}

/// Maps a phase-consistent centroid control to per-robot controls.
///
/// Translation passes the speed through unchanged; rotation gives robot `i`
/// the arc speed `l_i·|ω|` (forward along its pivoted heading) and the
/// centroid turn rate.
pub fn distribute_controls(u_c: &Control2, formation: &Formation, phase: Phase) -> Result<Vec<Control2>> {
    let dir = match phase {
        Phase::Translate => {
            if u_c.omega != 0.0 {
                return Err(Error::Contract(format!(
                    "translate phase with nonzero turn rate {}",
                    u_c.omega
                )));
            }
            1.0
        }
        Phase::Rotate(dir) => {
            if u_c.v != 0.0 {
                return Err(Error::Contract(format!("rotate phase with nonzero speed {}", u_c.v)));
            }
            if u_c.omega != 0.0 && RotationDir::of(u_c.omega) != dir {
                return Err(Error::Contract(format!(
                    "rotate phase {dir:?} disagrees with turn rate {}",
                    u_c.omega
                )));
            }
            dir.sign()
        }
    };
    Ok(formation
        .slots()
        .iter()
        .map(|s| Control2::new(u_c.v + dir * s.l() * u_c.omega, u_c.omega))
        .collect())
}

pub fn robots_from_centroid(centroid: &Pose2, formation: &Formation, phase: Phase) -> Vec<Pose2> {
    formation
        .slots()
        .iter()
        .map(|s| {
            let a = centroid.theta() + s.psi();
            Pose2::new(
                centroid.x() + s.l() * a.cos(),
                centroid.y() + s.l() * a.sin(),
                required_robot_heading(centroid.theta(), s, phase),
            )
        })
        .collect()
}

/// Least-squares rigid fit of the centroid to observed robot poses.
///
/// `observed` holds `(slot index, pose)` pairs for active robots. When the
/// observed contact points carry no orientation information (one robot, or
/// all lever arms zero) the heading is the circular mean of the robot
/// headings.
pub fn centroid_from_robots(observed: &[(usize, Pose2)], formation: &Formation) -> Result<Pose2> {
    if observed.is_empty() {
        return Err(Error::AllRobotsFailed);
    }
    let n = observed.len() as f64;
    let mut p_mean = [0.0; 2];
    let mut o_mean = [0.0; 2];
    for (i, pose) in observed {
        let slot = formation
            .slots()
            .get(*i)
            .ok_or_else(|| Error::Contract(format!("robot index {i} outside formation")))?;
        let o = slot.offset();
        p_mean[0] += pose.x();
        p_mean[1] += pose.y();
        o_mean[0] += o[0];
        o_mean[1] += o[1];
    }
    for k in 0..2 {
        p_mean[k] /= n;
        o_mean[k] /= n;
    }

    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut spread = 0.0;
    for (i, pose) in observed {
        let o = formation.slots()[*i].offset();
        let r = [o[0] - o_mean[0], o[1] - o_mean[1]];
        let q = [pose.x() - p_mean[0], pose.y() - p_mean[1]];
        dot += r[0] * q[0] + r[1] * q[1];
        cross += r[0] * q[1] - r[1] * q[0];
        spread += r[0] * r[0] + r[1] * r[1];
    }

    let theta = if spread > 1e-18 {
        cross.atan2(dot)
    } else {
        let (s, c) = observed
            .iter()
            .fold((0.0, 0.0), |(s, c), (_, p)| (s + p.theta().sin(), c + p.theta().cos()));
        s.atan2(c)
    };
    let (st, ct) = theta.sin_cos();
    Ok(Pose2::new(
        p_mean[0] - (ct * o_mean[0] - st * o_mean[1]),
        p_mean[1] - (st * o_mean[0] + ct * o_mean[1]),
        theta,
    ))
}

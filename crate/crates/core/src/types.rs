//! Geometric primitives shared by every module: planar poses, unicycle
//! controls, angle arithmetic and diagonal Gaussian noise models.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
///
/// Angles already inside the interval are returned untouched, which makes
/// the function exactly idempotent. Non-finite input propagates as NaN; use
/// [`try_wrap_angle`] when the input is untrusted.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

pub fn try_wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap_angle(a))
}

/// SE(2) pose of the payload centroid or of a robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose2 {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    x: f64,
    y: f64,
    #[serde(default)]
    theta: f64,
}

impl From<PoseRepr> for Pose2 {
    fn from(r: PoseRepr) -> Self {
        Pose2::new(r.x, r.y, r.theta)
    }
}

impl From<Pose2> for PoseRepr {
    fn from(p: Pose2) -> Self {
        PoseRepr {
            x: p.x,
            y: p.y,
            theta: p.theta,
        }
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Pose2::identity()
    }
}

impl Pose2 {
    #[inline]
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        Ok(Pose2::new(x, y, theta))
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Pose2::new(self.x, self.y, theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }
}

/// Unicycle control: forward speed and turn rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control2 {
    pub v: f64,
    pub omega: f64,
}

impl Control2 {
    pub const ZERO: Control2 = Control2 { v: 0.0, omega: 0.0 };

    #[inline]
    pub fn new(v: f64, omega: f64) -> Self {
        Control2 { v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }

    /// Saturates both channels to the given symmetric limits.
    pub fn clamped(&self, v_max: f64, omega_max: f64) -> Self {
        Control2 {
            v: self.v.clamp(-v_max, v_max),
            omega: self.omega.clamp(-omega_max, omega_max),
        }
    }
}

/// World-frame centroid velocity `(ẋ, ẏ, θ̇)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidVel {
    pub xdot: f64,
    pub ydot: f64,
    pub thetadot: f64,
}

impl CentroidVel {
    pub fn new(xdot: f64, ydot: f64, thetadot: f64) -> Self {
        CentroidVel { xdot, ydot, thetadot }
    }
}

/// `a ⊟ b`: componentwise difference with the angle wrapped.
#[inline]
pub fn pose_boxminus(a: &Pose2, b: &Pose2) -> Vector3<f64> {
    Vector3::new(a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta))
}

/// `a ⊞ d`: the retraction used by the solver update.
#[inline]
pub fn pose_boxplus(a: &Pose2, d: &Vector3<f64>) -> Pose2 {
    Pose2::new(a.x + d[0], a.y + d[1], a.theta + d[2])
}

/// Diagonal Gaussian noise model given by per-axis variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagNoise {
    variances: SmallVec<[f64; 3]>,
    inv_sigmas: SmallVec<[f64; 3]>,
}

impl DiagNoise {
    /// Fails on empty input, non-finite entries and variances `<= 0`.
    pub fn from_variances(variances: &[f64]) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::Domain("noise model needs at least one axis".into()));
        }
        for &s in variances {
            if !s.is_finite() {
                return Err(Error::NonFinite("noise variance"));
            }
            if s <= 0.0 {
                return Err(Error::Domain(format!("noise variance must be positive, got {s}")));
            }
        }
        Ok(DiagNoise {
            variances: variances.iter().copied().collect(),
            inv_sigmas: variances.iter().map(|s| 1.0 / s.sqrt()).collect(),
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        DiagNoise::from_variances(&vec![variance; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `1/σ` per axis; whitening multiplies residual rows by these.
    #[inline]
    pub fn inv_sigmas(&self) -> &[f64] {
        &self.inv_sigmas
    }

    /// Squared Mahalanobis norm of a raw (unwhitened) residual.
    pub fn mahalanobis_sq(&self, raw: &[f64]) -> f64 {
        raw.iter().zip(&self.variances).map(|(r, s)| r * r / s).sum()
    }
}

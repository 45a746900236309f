//! Whitened residuals and analytic Jacobians for the planning factors.
//!
//! Every residual is scaled row-wise by `1/σ` of its noise model, so the
//! squared norm of [`Residual::value`] is the Mahalanobis cost of the term.

use nalgebra::{DMatrix, Matrix3, Vector3};
use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::graph::{Key, Variable};
use crate::kinematics::centroid_step;
use crate::types::{pose_boxminus, Control2, DiagNoise, Pose2};

/// Variance used by anchor factors on every axis.
pub const ANCHOR_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    PosePrior,
    ControlPrior,
    Motion,
    Obstacle,
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorData {
    PosePrior { reference: Pose2 },
    ControlPrior { reference: Control2 },
    Motion { dt: f64 },
    Obstacle { center: [f64; 2], radius: f64 },
    Anchor { pose: Pose2 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    data: FactorData,
    keys: SmallVec<[Key; 3]>,
    noise: DiagNoise,
}

fn expect_dim(noise: &DiagNoise, dim: usize, what: &str) -> Result<()> {
    if noise.dim() != dim {
        return Err(Error::Contract(format!(
            "{what} needs a {dim}-D noise model, got {}",
            noise.dim()
        )));
    }
    Ok(())
}

impl Factor {
    pub fn pose_prior(pose: usize, reference: Pose2, noise: DiagNoise) -> Result<Self> {
        expect_dim(&noise, 3, "pose prior")?;
        Ok(Factor {
            data: FactorData::PosePrior { reference },
            keys: smallvec![Key::Pose(pose)],
            noise,
        })
    }

    pub fn control_prior(control: usize, reference: Control2, noise: DiagNoise) -> Result<Self> {
        expect_dim(&noise, 2, "control prior")?;
        Ok(Factor {
            data: FactorData::ControlPrior { reference },
            keys: smallvec![Key::Control(control)],
            noise,
        })
    }

    /// Ternary factor over `(x_n, u_n, x_{n+1})`.
    pub fn motion(step: usize, dt: f64, noise: DiagNoise) -> Result<Self> {
        expect_dim(&noise, 3, "motion factor")?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("motion step must be > 0, got {dt}")));
        }
        Ok(Factor {
            data: FactorData::Motion { dt },
            keys: smallvec![Key::Pose(step), Key::Control(step), Key::Pose(step + 1)],
            noise,
        })
    }

    pub fn obstacle(pose: usize, center: [f64; 2], radius: f64, noise: DiagNoise) -> Result<Self> {
        expect_dim(&noise, 1, "obstacle factor")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("safety radius must be > 0, got {radius}")));
        }
        if !(center[0].is_finite() && center[1].is_finite()) {
            return Err(Error::NonFinite("obstacle center"));
        }
        Ok(Factor {
            data: FactorData::Obstacle { center, radius },
            keys: smallvec![Key::Pose(pose)],
            noise,
        })
    }

    /// Near-hard prior pinning a pose to a measured value.
    pub fn anchor(pose_key: usize, pose: Pose2) -> Self {
        Factor {
            data: FactorData::Anchor { pose },
            keys: smallvec![Key::Pose(pose_key)],
            noise: DiagNoise::isotropic(3, ANCHOR_VARIANCE).expect("positive variance"),
        }
    }

    pub fn kind(&self) -> FactorKind {
        match self.data {
            FactorData::PosePrior { .. } => FactorKind::PosePrior,
            FactorData::ControlPrior { .. } => FactorKind::ControlPrior,
            FactorData::Motion { .. } => FactorKind::Motion,
            FactorData::Obstacle { .. } => FactorKind::Obstacle,
            FactorData::Anchor { .. } => FactorKind::Anchor,
        }
    }

    pub fn data(&self) -> &FactorData {
        &self.data
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn noise(&self) -> &DiagNoise {
        &self.noise
    }

    pub fn residual_dim(&self) -> usize {
        self.noise.dim()
    }

    fn kind_error(&self, wanted: FactorKind) -> Error {
        Error::Contract(format!("expected a {wanted:?} factor, got {:?}", self.kind()))
    }

    pub fn eval_pose_prior(&self, x: &Pose2) -> Result<Residual> {
        match &self.data {
            FactorData::PosePrior { reference } => Ok(self.pose_difference(x, reference)),
            _ => Err(self.kind_error(FactorKind::PosePrior)),
        }
    }

    pub fn eval_anchor(&self, x: &Pose2) -> Result<Residual> {
        match &self.data {
            FactorData::Anchor { pose } => Ok(self.pose_difference(x, pose)),
            _ => Err(self.kind_error(FactorKind::Anchor)),
        }
    }

    pub fn eval_control_prior(&self, u: &Control2) -> Result<Residual> {
        match &self.data {
            FactorData::ControlPrior { reference } => {
                let mut r = Residual::new(2, [u.v - reference.v, u.omega - reference.omega, 0.0]);
                r.push_block(2, Matrix3::identity());
                Ok(r.whitened(&self.noise))
            }
            _ => Err(self.kind_error(FactorKind::ControlPrior)),
        }
    }

    pub fn eval_motion(&self, x: &Pose2, u: &Control2, x_next: &Pose2) -> Result<Residual> {
        let dt = match self.data {
            FactorData::Motion { dt } => dt,
            _ => return Err(self.kind_error(FactorKind::Motion)),
        };
        let predicted = centroid_step(x, u, dt);
        let e = pose_boxminus(&predicted, x_next);
        let mut r = Residual::new(3, [e[0], e[1], e[2]]);
        let (s, c) = x.theta().sin_cos();
        #[rustfmt::skip]
        let d_x = Matrix3::new(
            1.0, 0.0, -dt * u.v * s,
            0.0, 1.0, dt * u.v * c,
            0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let d_u = Matrix3::new(
            dt * c, 0.0, 0.0,
            dt * s, 0.0, 0.0,
            0.0, dt, 0.0,
        );
        r.push_block(3, d_x);
        r.push_block(2, d_u);
        r.push_block(3, -Matrix3::identity());
        Ok(r.whitened(&self.noise))
    }

    /// Hinge `1 - d/R` inside the safety bubble, zero outside. At `d = 0`
    /// the value is `1` with a zero Jacobian.
    pub fn eval_obstacle(&self, x: &Pose2) -> Result<Residual> {
        let (center, radius) = match self.data {
            FactorData::Obstacle { center, radius } => (center, radius),
            _ => return Err(self.kind_error(FactorKind::Obstacle)),
        };
        let dx = x.x() - center[0];
        let dy = x.y() - center[1];
        let d = dx.hypot(dy);
        let mut jac = Matrix3::zeros();
        let value = if d < radius {
            if d > 0.0 {
                jac[(0, 0)] = -dx / (radius * d);
                jac[(0, 1)] = -dy / (radius * d);
            }
            1.0 - d / radius
        } else {
            0.0
        };
        let mut r = Residual::new(1, [value, 0.0, 0.0]);
        r.push_block(3, jac);
        Ok(r.whitened(&self.noise))
    }

    fn pose_difference(&self, x: &Pose2, reference: &Pose2) -> Residual {
        let e = pose_boxminus(x, reference);
        let mut r = Residual::new(3, [e[0], e[1], e[2]]);
        r.push_block(3, Matrix3::identity());
        r.whitened(&self.noise)
    }

    fn check_arity(&self, vars: &[&Variable]) -> Result<()> {
        if vars.len() != self.keys.len() {
            return Err(Error::Contract(format!(
                "{:?} factor takes {} variables, got {}",
                self.kind(),
                self.keys.len(),
                vars.len()
            )));
        }
        Ok(())
    }

    /// Squared whitened residual norm, without building Jacobians.
    pub fn error(&self, vars: &[&Variable]) -> Result<f64> {
        self.check_arity(vars)?;
        let pose = |i: usize| vars[i].as_pose().ok_or(Error::VariableKind(self.keys[i]));
        let control = |i: usize| vars[i].as_control().ok_or(Error::VariableKind(self.keys[i]));
        let raw: [f64; 3] = match &self.data {
            FactorData::PosePrior { reference: r } | FactorData::Anchor { pose: r } => {
                pose_boxminus(pose(0)?, r).into()
            }
            FactorData::ControlPrior { reference } => {
                let u = control(0)?;
                [u.v - reference.v, u.omega - reference.omega, 0.0]
            }
            FactorData::Motion { dt } => pose_boxminus(&centroid_step(pose(0)?, control(1)?, *dt), pose(2)?).into(),
            FactorData::Obstacle { center, radius } => {
                let x = pose(0)?;
                let d = (x.x() - center[0]).hypot(x.y() - center[1]);
                [if d < *radius { 1.0 - d / radius } else { 0.0 }, 0.0, 0.0]
            }
        };
        Ok(raw
            .iter()
            .zip(self.noise.inv_sigmas())
            .map(|(r, w)| (r * w) * (r * w))
            .sum())
    }

    /// True when the factor contributes neither cost nor curvature at these
    /// values: an obstacle factor outside its safety bubble.
    pub fn is_inactive(&self, vars: &[&Variable]) -> bool {
        match (&self.data, vars.first().and_then(|v| v.as_pose())) {
            (FactorData::Obstacle { center, radius }, Some(x)) => {
                let dx = x.x() - center[0];
                let dy = x.y() - center[1];
                dx * dx + dy * dy >= radius * radius
            }
            _ => false,
        }
    }

    /// Evaluates against variables given in key order.
    pub fn evaluate(&self, vars: &[&Variable]) -> Result<Residual> {
        if vars.len() != self.keys.len() {
            return Err(Error::Contract(format!(
                "{:?} factor takes {} variables, got {}",
                self.kind(),
                self.keys.len(),
                vars.len()
            )));
        }
        let pose = |i: usize| vars[i].as_pose().ok_or(Error::VariableKind(self.keys[i]));
        let control = |i: usize| vars[i].as_control().ok_or(Error::VariableKind(self.keys[i]));
        match self.data {
            FactorData::PosePrior { .. } => self.eval_pose_prior(pose(0)?),
            FactorData::Anchor { .. } => self.eval_anchor(pose(0)?),
            FactorData::ControlPrior { .. } => self.eval_control_prior(control(0)?),
            FactorData::Motion { .. } => self.eval_motion(pose(0)?, control(1)?, pose(2)?),
            FactorData::Obstacle { .. } => self.eval_obstacle(pose(0)?),
        }
    }
}

/// Whitened residual plus one Jacobian block per connected variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    dim: usize,
    raw: [f64; 3],
    value: [f64; 3],
    // (columns, block); rows beyond `dim` and columns beyond `cols` are zero.
    blocks: SmallVec<[(usize, Matrix3<f64>); 3]>,
}

impl Residual {
    fn new(dim: usize, raw: [f64; 3]) -> Self {
        Residual {
            dim,
            raw,
            value: raw,
            blocks: SmallVec::new(),
        }
    }

    fn push_block(&mut self, cols: usize, block: Matrix3<f64>) {
        self.blocks.push((cols, block));
    }

    fn whitened(mut self, noise: &DiagNoise) -> Self {
        for (r, w) in noise.inv_sigmas().iter().enumerate() {
            self.value[r] *= w;
            for (_, b) in self.blocks.iter_mut() {
                for c in 0..3 {
                    b[(r, c)] *= w;
                }
            }
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whitened residual.
    pub fn value(&self) -> &[f64] {
        &self.value[..self.dim]
    }

    /// Residual before whitening.
    pub fn raw(&self) -> &[f64] {
        &self.raw[..self.dim]
    }

    /// Squared norm of the whitened residual.
    pub fn squared_norm(&self) -> f64 {
        self.value().iter().map(|v| v * v).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Whitened Jacobian block `i` as a `dim × var_dim` matrix.
    pub fn jacobian(&self, i: usize) -> DMatrix<f64> {
        let (cols, b) = &self.blocks[i];
        DMatrix::from_fn(self.dim, *cols, |r, c| b[(r, c)])
    }

    pub(crate) fn block(&self, i: usize) -> &Matrix3<f64> {
        &self.blocks[i].1
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.value().iter().all(|v| *v == 0.0) && self.blocks.iter().all(|(_, b)| b.iter().all(|v| *v == 0.0))
    }
}

/// Applies a tangent-space perturbation to a variable (⊞ for poses).
pub(crate) fn perturb(var: &Variable, delta: &[f64]) -> Variable {
    match var {
        Variable::Pose(p) => Variable::Pose(crate::types::pose_boxplus(
            p,
            &Vector3::new(delta[0], delta[1], delta[2]),
        )),
        Variable::Control(u) => Variable::Control(Control2::new(u.v + delta[0], u.omega + delta[1])),
    }
}

//! Factor-graph container: typed pose/control variables indexed by step,
//! the factors that connect them, and the `Values` estimate.

use std::collections::BTreeMap;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::factors::{Factor, FactorKind, Residual};
use crate::types::{Control2, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Pose(usize),
    Control(usize),
}

impl Key {
    pub fn dim(&self) -> usize {
        match self {
            Key::Pose(_) => 3,
            Key::Control(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variable {
    Pose(Pose2),
    Control(Control2),
}

impl Variable {
    pub fn dim(&self) -> usize {
        match self {
            Variable::Pose(_) => 3,
            Variable::Control(_) => 2,
        }
    }

    pub fn as_pose(&self) -> Option<&Pose2> {
        match self {
            Variable::Pose(p) => Some(p),
            Variable::Control(_) => None,
        }
    }

    pub fn as_control(&self) -> Option<&Control2> {
        match self {
            Variable::Control(u) => Some(u),
            Variable::Pose(_) => None,
        }
    }

    fn matches(&self, key: &Key) -> bool {
        matches!(
            (self, key),
            (Variable::Pose(_), Key::Pose(_)) | (Variable::Control(_), Key::Control(_))
        )
    }
}

/// Current estimate: one value per variable key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<Key, Variable>,
}

impl Values {
    pub fn new() -> Self {
        Values::default()
    }

    pub fn insert_pose(&mut self, step: usize, pose: Pose2) {
        self.map.insert(Key::Pose(step), Variable::Pose(pose));
    }

    pub fn insert_control(&mut self, step: usize, control: Control2) {
        self.map.insert(Key::Control(step), Variable::Control(control));
    }

    pub fn insert(&mut self, key: Key, var: Variable) -> Result<()> {
        if !var.matches(&key) {
            return Err(Error::VariableKind(key));
        }
        self.map.insert(key, var);
        Ok(())
    }

    pub fn get(&self, key: &Key) -> Option<&Variable> {
        self.map.get(key)
    }

    pub fn pose(&self, step: usize) -> Result<Pose2> {
        let key = Key::Pose(step);
        match self.map.get(&key) {
            Some(Variable::Pose(p)) => Ok(*p),
            Some(_) => Err(Error::VariableKind(key)),
            None => Err(Error::MissingVariable(key)),
        }
    }

    pub fn control(&self, step: usize) -> Result<Control2> {
        let key = Key::Control(step);
        match self.map.get(&key) {
            Some(Variable::Control(u)) => Ok(*u),
            Some(_) => Err(Error::VariableKind(key)),
            None => Err(Error::MissingVariable(key)),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Variable)> {
        self.map.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSlot {
    pub key: Key,
    pub dim: usize,
    /// Column offset of the variable in the stacked tangent vector.
    pub offset: usize,
}

const ABSENT: u32 = u32::MAX;

/// Ordered variables and the factors over them.
///
/// Variables are laid out in insertion order; inserting them in chain order
/// (`x_k, u_k, x_{k+1}, …`) keeps the normal matrix narrowly banded.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    vars: Vec<VarSlot>,
    pose_lookup: Vec<u32>,
    control_lookup: Vec<u32>,
    factors: Vec<Factor>,
    factor_vars: Vec<SmallVec<[u32; 3]>>,
    tangent_dim: usize,
}

impl FactorGraph {
    pub fn new() -> Self {
        FactorGraph::default()
    }

    pub fn with_capacity(vars: usize, factors: usize) -> Self {
        FactorGraph {
            vars: Vec::with_capacity(vars),
            factors: Vec::with_capacity(factors),
            factor_vars: Vec::with_capacity(factors),
            ..FactorGraph::default()
        }
    }

    /// Registers a variable; re-registering an existing key is a no-op.
    pub fn add_variable(&mut self, key: Key) {
        if self.index_of(&key).is_some() {
            return;
        }
        let ordinal = self.vars.len() as u32;
        let (table, step) = match key {
            Key::Pose(n) => (&mut self.pose_lookup, n),
            Key::Control(n) => (&mut self.control_lookup, n),
        };
        if table.len() <= step {
            table.resize(step + 1, ABSENT);
        }
        table[step] = ordinal;
        self.vars.push(VarSlot {
            key,
            dim: key.dim(),
            offset: self.tangent_dim,
        });
        self.tangent_dim += key.dim();
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<()> {
        let resolved = factor
            .keys()
            .iter()
            .map(|k| self.index_of(k).map(|i| i as u32).ok_or(Error::MissingVariable(*k)))
            .collect::<Result<SmallVec<[u32; 3]>>>()?;
        self.factors.push(factor);
        self.factor_vars.push(resolved);
        Ok(())
    }

    pub fn index_of(&self, key: &Key) -> Option<usize> {
        let (table, step) = match *key {
            Key::Pose(n) => (&self.pose_lookup, n),
            Key::Control(n) => (&self.control_lookup, n),
        };
        match table.get(step) {
            Some(&i) if i != ABSENT => Some(i as usize),
            _ => None,
        }
    }

    pub fn variables(&self) -> &[VarSlot] {
        &self.vars
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_variables(&self) -> usize {
        self.vars.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Total tangent-space dimension.
    pub fn dim(&self) -> usize {
        self.tangent_dim
    }

    pub(crate) fn factor_variables(&self, i: usize) -> &[u32] {
        &self.factor_vars[i]
    }

    /// Values in graph order; fails if any variable is missing.
    pub(crate) fn ordered(&self, values: &Values) -> Result<Vec<Variable>> {
        self.vars
            .iter()
            .map(|slot| match values.get(&slot.key) {
                Some(v) if v.matches(&slot.key) => Ok(*v),
                Some(_) => Err(Error::VariableKind(slot.key)),
                None => Err(Error::MissingVariable(slot.key)),
            })
            .collect()
    }

    pub(crate) fn to_values(&self, ordered: &[Variable]) -> Values {
        Values {
            map: self.vars.iter().zip(ordered).map(|(slot, v)| (slot.key, *v)).collect(),
        }
    }

    fn factor_inputs<'a>(&self, i: usize, ordered: &'a [Variable]) -> SmallVec<[&'a Variable; 3]> {
        let idx = &self.factor_vars[i];
        let mut out = SmallVec::new();
        for &o in idx {
            out.push(&ordered[o as usize]);
        }
        out
    }

    pub(crate) fn evaluate_factor(&self, i: usize, ordered: &[Variable]) -> Result<Residual> {
        let r = self.factors[i].evaluate(&self.factor_inputs(i, ordered))?;
        if r.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual { index: i });
        }
        Ok(r)
    }

    /// Whether factor `i` has identically zero residual and Jacobian here.
    pub(crate) fn factor_inactive(&self, i: usize, ordered: &[Variable]) -> bool {
        let f = &self.factors[i];
        f.kind() == FactorKind::Obstacle && f.is_inactive(&[&ordered[self.factor_vars[i][0] as usize]])
    }

    pub(crate) fn error_ordered(&self, ordered: &[Variable]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.factors.len() {
            if self.factor_inactive(i, ordered) {
                continue;
            }
            let e = self.factors[i].error(&self.factor_inputs(i, ordered))?;
            if !e.is_finite() {
                return Err(Error::NonFiniteResidual { index: i });
            }
            total += e;
        }
        Ok(total)
    }
}

/// Sum of squared whitened residuals over all factors.
pub fn total_error(graph: &FactorGraph, values: &Values) -> Result<f64> {
    let ordered = graph.ordered(values)?;
    graph.error_ordered(&ordered)
}

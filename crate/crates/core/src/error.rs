use std::path::PathBuf;

use crate::graph::{Key, Values};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("variable {0:?} is not present")]
    MissingVariable(Key),

    #[error("variable {0:?} holds the wrong kind of value")]
    VariableKind(Key),

    #[error("factor {index} produced a non-finite residual")]
    NonFiniteResidual { index: usize },

    #[error("damped normal system is not positive definite (pivot {pivot})")]
    Indefinite { pivot: usize },

    #[error("solver diverged after {iterations} iterations (lambda {lambda:e})")]
    Diverged {
        iterations: usize,
        lambda: f64,
        best: Box<Values>,
        best_error: f64,
    },

    #[error("reference speed {required:.4} m/s exceeds limit {limit:.4} m/s")]
    InfeasibleSchedule { required: f64, limit: f64 },

    #[error("all robots have failed")]
    AllRobotsFailed,

    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

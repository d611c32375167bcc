use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no support of size <= {k_max} reproduces the observation")]
    Infeasible { k_max: usize },

    #[error("enumeration guard exceeded: {0}")]
    EnumerationTooLarge(String),

    #[error("selected columns are rank deficient (condition number {cond:e})")]
    RankDeficient { cond: f64 },

    #[error("combinatorial budget exceeded: C({m}, {k}) = {count} subsets")]
    BudgetExceeded { m: usize, k: usize, count: u128 },

    #[error("perturbation leaves no null space (numerical rank {rank} with {rows} rows)")]
    DegenerateNullSpace { rank: usize, rows: usize },

    #[error("gate sets overlap at index {0}")]
    OverlappingGates(usize),

    #[error("diagonal scaling is singular at index {0}")]
    SingularScaling(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid phase length: {0}")]
    InvalidPhase(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("lighting rig is rank deficient (singular values {0:?})")]
    RankDeficientRig(Vec<f64>),

    #[error("selected inlier rows are rank deficient")]
    DegenerateInliers,

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

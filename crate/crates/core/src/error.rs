use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which kernel mode of the centered-difference operator a field touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    Constant,
    Alternating,
}

impl std::fmt::Display for KernelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelMode::Constant => write!(f, "constant"),
            KernelMode::Alternating => write!(f, "alternating"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 4 nodes, got {0}")]
    GridTooSmall(usize),

    #[error("field length {len} does not match grid size {n}")]
    LengthMismatch { len: usize, n: usize },

    #[error("fields live on different grids ({left} vs {right} nodes)")]
    GridMismatch { left: usize, right: usize },

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("mollifier radius must satisfy 0 < epsilon < pi, got {0}")]
    InvalidEpsilon(f64),

    #[error("smoothed-sign slope must be positive, got {0}")]
    InvalidSlope(f64),

    #[error("mobility exponent overflow: max |g| = {max_abs:.6e} at node {index} (epsilon too small for this grid?)")]
    MobilityOverflow { max_abs: f64, index: usize },

    #[error("field has mean {mean:.3e}, expected zero")]
    NonzeroMean { mean: f64 },

    #[error("field has a {mode} kernel component of size {amount:.3e}")]
    KernelComponent { mode: KernelMode, amount: f64 },

    #[error("factorization of the {what} system failed")]
    Factorization { what: &'static str },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("step {step}: (tau/lambda)*||A D^T D|| = {ratio:.6e} >= 1 (norm estimate {estimate:.6e})")]
    StepCondition { step: usize, ratio: f64, estimate: f64 },

    #[error("step {step}: inner solver did not converge in {iterations} iterations (last update {update:.3e})")]
    NotConverged {
        step: usize,
        iterations: usize,
        update: f64,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grids are not nested: fine has {fine} nodes, coarse has {coarse}")]
    NotNested { fine: usize, coarse: usize },

    #[error("log-log fit needs at least 3 points with positive values")]
    BadFit,

    #[error("config error at {key}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ (Error::AtStep { .. } | Error::StepCondition { .. } | Error::NotConverged { .. }) => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::AtStep { source, .. } => source.is_numerical(),
            Error::MobilityOverflow { .. }
            | Error::NotConverged { .. }
            | Error::StepCondition { .. }
            | Error::Factorization { .. }
            | Error::NonzeroMean { .. }
            | Error::KernelComponent { .. }
            | Error::NonFinite { .. } => true,
            _ => false,
        }
    }
}

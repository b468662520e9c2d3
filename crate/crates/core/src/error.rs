use std::path::PathBuf;

use crate::solver::SolveTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid mesh configuration: {0}")]
    InvalidMesh(String),

    #[error("invalid material data: {0}")]
    InvalidMaterial(String),

    #[error("unknown material `{0}`")]
    UnknownMaterial(String),

    #[error("air gap `{0}` has no radial layers")]
    CollapsedGap(&'static str),

    #[error("system is not periodic with symmetry {symmetry}: {detail}")]
    NotPeriodic { symmetry: usize, detail: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("dense oracle limited to {limit} unknowns, got {size}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("no convergence after {iterations} iterations (last relative torque change {last_change:.3e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        trace: Box<SolveTrace>,
    },

    #[error("solve failed at rotor 1 angle {angle_deg:.4} deg: {source}")]
    AtAngle {
        angle_deg: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The solver trace carried by a convergence failure, looking through angle wrappers.
    pub fn trace(&self) -> Option<&SolveTrace> {
        match self {
            Error::NoConvergence { trace, .. } => Some(trace),
            Error::AtAngle { source, .. } => source.trace(),
            _ => None,
        }
    }

    pub fn is_convergence_failure(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::Factorization(_) => true,
            Error::AtAngle { source, .. } => source.is_convergence_failure(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Csv(_))
    }
}

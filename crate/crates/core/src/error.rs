use thiserror::Error;

/// Errors raised by the library. Each variant carries a stable short code,
/// available through [`Error::code`], which the CLI prints in diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-centers: a center set needs at least one point")]
    EmptyCenters,

    #[error("dim-mismatch: expected dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("center-set-mismatch: functions live on different center sets")]
    CenterSetMismatch,

    #[error("center-not-registered: data point {index} of agent {agent} is not in the center set")]
    CenterNotRegistered { agent: usize, index: usize },

    #[error("too-few-agents: need at least 2 agents, got {0}")]
    TooFewAgents(usize),

    #[error("bad-window: transition needs t >= s >= 1, got t={t}, s={s}")]
    BadWindow { t: usize, s: usize },

    #[error("bad-mixing-matrix: {0}")]
    BadMixingMatrix(String),

    #[error("need-full-record: ergodic average over {horizon} iterates needs stride-1 snapshots (stride is {stride})")]
    NeedFullRecord { stride: usize, horizon: usize },

    #[error("simplex-too-large: grid search supports at most 4 coordinates, got {0}")]
    SimplexTooLarge(usize),

    #[error("too-few-samples-for-outliers: outlier injection needs n >= 2, got {0}")]
    TooFewSamplesForOutliers(usize),

    #[error("nonconvex-loss: {0} loss is nonconvex and cannot drive mirror descent")]
    NonconvexLoss(&'static str),

    #[error("incompatible-domain: {0}")]
    IncompatibleDomain(String),

    #[error("invalid-parameter: {0}")]
    InvalidParameter(String),

    #[error("oracle-failure: {0}")]
    Oracle(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyCenters => "empty-centers",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::CenterSetMismatch => "center-set-mismatch",
            Error::CenterNotRegistered { .. } => "center-not-registered",
            Error::TooFewAgents(_) => "too-few-agents",
            Error::BadWindow { .. } => "bad-window",
            Error::BadMixingMatrix(_) => "bad-mixing-matrix",
            Error::NeedFullRecord { .. } => "need-full-record",
            Error::SimplexTooLarge(_) => "simplex-too-large",
            Error::TooFewSamplesForOutliers(_) => "too-few-samples-for-outliers",
            Error::NonconvexLoss(_) => "nonconvex-loss",
            Error::IncompatibleDomain(_) => "incompatible-domain",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Oracle(_) => "oracle-failure",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

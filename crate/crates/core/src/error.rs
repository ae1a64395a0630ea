use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad classes of failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed files, invalid configurations, missing paths.
    Config,
    /// A well-formed input that is numerically degenerate.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contrast matrix is rank deficient (singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid outcome model: {0}")]
    InvalidModel(String),

    #[error("invalid assignment probability {value} for unit {unit}, arm {arm}")]
    InvalidProbability { unit: usize, arm: usize, value: f64 },

    #[error("invalid experiment log: {0}")]
    InvalidLog(String),

    #[error("singular projected covariance (smallest eigenvalue {eigenvalue:e})")]
    SingularCovariance { eigenvalue: f64 },

    #[error("group proportion must be below one half (group {group} has proportion {proportion})")]
    GroupProportion { group: usize, proportion: f64 },

    #[error("empty fold-arm cell; increase fold size (fold {fold}, arm {arm})")]
    EmptyFoldArm { fold: usize, arm: usize },

    #[error("arm {arm} has {count} units; at least {needed} required")]
    SparseArm {
        arm: usize,
        count: usize,
        needed: usize,
    },

    #[error("at least {needed} units required, got {got}")]
    TooFewUnits { needed: usize, got: usize },

    #[error("enumeration support of {size} paths exceeds the cap of {cap}")]
    EnumerationCap { size: f64, cap: usize },

    #[error("unknown identity tag `{0}`")]
    UnknownIdentity(String),

    #[error("invalid study configuration: {0}")]
    Config(String),

    #[error("replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::RankDeficient { .. }
            | Error::SingularCovariance { .. }
            | Error::EmptyFoldArm { .. }
            | Error::SparseArm { .. }
            | Error::InvalidProbability { .. } => ErrorClass::Numerical,
            Error::Replication { source, .. } => source.class(),
            _ => ErrorClass::Config,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

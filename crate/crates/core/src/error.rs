use thiserror::Error;

/// Problems with an input dataset or CSV file.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Cell { line: usize, message: String },
    #[error("row {row}: external subject with a=1")]
    ExternalTreated { row: usize },
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has no internal (z=1) subjects")]
    NoInternal,
    #[error("empty {0} stratum")]
    EmptyStratum(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{model} model: design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient {
        model: String,
        rank: usize,
        cols: usize,
    },
    #[error("{model} model: no rows in the fitted stratum")]
    EmptyStratum { model: String },
    #[error("{model} model: did not converge after {iterations} iterations")]
    NotConverged { model: String, iterations: usize },
    #[error("{model} model: perfect separation (|coefficient| exceeded {bound})")]
    Separation { model: String, bound: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("effect measure domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{failed} of {total} replicates failed (limit {limit})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },
    #[error("scenario {0} requires a calibrated interaction vector")]
    CalibrationMissing(char),
    #[error("calibration did not converge: {0}")]
    Calibration(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a model fit, as opposed to bad input or configuration.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::EmptyStratum { .. }
                | Error::NotConverged { .. }
                | Error::Separation { .. }
                | Error::Singular(_)
                | Error::Domain(_)
                | Error::TooManyFailures { .. }
                | Error::Calibration(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

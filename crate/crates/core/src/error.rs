use thiserror::Error;

/// Errors produced anywhere in the fitting and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("point pattern is empty ({dropped} rows dropped by window/time filtering)")]
    EmptyPattern { dropped: usize },

    #[error("invalid observation window: {0}")]
    InvalidWindow(String),

    #[error("event ({x}, {y}) lies outside the grid bounding box")]
    OutsideGrid { x: f64, y: f64 },

    #[error("invalid cluster count K={k} ({distinct} distinct points)")]
    InvalidK { k: usize, distinct: usize },

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("raster has no positive mass on the window")]
    ZeroMass,

    #[error("design matrix is rank deficient; offending columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize, last: Vec<f64> },

    #[error("intensity {value} at event {index} is not positive")]
    NonPositiveIntensity { index: usize, value: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("quadrature did not converge (achieved error estimate {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("contrast is not finite at {0:?}")]
    NonFiniteContrast(Vec<f64>),

    #[error("circulant embedding is not positive semidefinite (negative mass {negative_mass:e} of trace {trace:e})")]
    NegativeEigenvalues { negative_mass: f64, trace: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("step size tuning failed: acceptance rate {rate} after adaptation")]
    TuningFailure { rate: f64 },

    #[error("simulation {index} failed: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

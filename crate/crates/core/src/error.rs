use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver blew up at time index {time_index}")]
    SolverBlowup { time_index: usize },

    #[error("unknown OOD scenario id {0} (expected 1..=9)")]
    UnknownScenario(usize),

    #[error("metric is singular: smallest eigenvalue {min_eigenvalue:e}")]
    SingularMetric { min_eigenvalue: f64 },

    #[error("degenerate chart: {0}")]
    DegenerateChart(String),

    #[error("operation requires dimension {expected}, got d = {got}")]
    Dimension { expected: &'static str, got: usize },

    #[error("sphere radius is extinct after t = {extinction_time}")]
    Extinction { extinction_time: f64 },

    #[error("ball of radius {radius} around {center:?} leaves the chart")]
    BallOutsideChart { center: Vec<f64>, radius: f64 },

    #[error("degenerate flow: {fraction:.3} of denominator entries masked")]
    DegenerateFlow { fraction: f64 },

    #[error("non-finite {term} loss at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mismatched seeds: {0}")]
    SeedMismatch(String),

    #[error("missing file {0}")]
    Missing(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("plotting failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("map parse error at line {line}: {msg}")]
    MapParse { line: usize, msg: String },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("bounding box captures {runs} disjoint path segments")]
    AmbiguousSegment { runs: usize },

    #[error("quadratic fit failed: {0}")]
    FitFailure(String),

    #[error("leader pose is stale: {age:.3} s old (limit {limit:.3} s)")]
    StalePose { age: f64, limit: f64 },

    #[error("no path point within {window:.3} m of the vehicle")]
    PathLost { window: f64 },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("trace parse error: {0}")]
    TraceParse(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

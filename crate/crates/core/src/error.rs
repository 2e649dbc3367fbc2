use std::path::PathBuf;

use crate::model::ConfigViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature vector is empty or all zeros, cannot normalize")]
    ZeroVector,

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("innovation covariance is singular")]
    SingularCovariance,

    #[error("confidence {0} out of [0,1]")]
    InvalidConfidence(f64),

    #[error("invalid tracker configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("frame ordering violated: frame {found} after frame {previous}")]
    FrameOrder { previous: u32, found: u32 },

    #[error("detection (frame {frame}, det {det_id}) belongs to frame {frame} but was passed with frame {expected}")]
    FrameMismatch { frame: u32, det_id: i64, expected: u32 },

    #[error("(frame {frame}, det {det_id}) has no quality score; dynamic lambda requires one for every detection")]
    MissingQuality { frame: u32, det_id: i64 },

    #[error("per-detection lambda has {found} entries for {expected} detections")]
    LambdaLength { expected: usize, found: usize },

    #[error("lambda value {0} out of [0,1]")]
    InvalidLambda(f64),

    #[error("(frame {frame}, det {det_id}) has no ground-truth identity")]
    MissingGtId { frame: u32, det_id: i64 },

    #[error("frame {frame} has {count} detections, grid search allows at most {max}; use fewer lambda options or raise the limit")]
    TooManyDetections { frame: u32, count: usize, max: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("(frame {frame}, det {det_id}) missing in {file}")]
    MissingEmbedding {
        frame: u32,
        det_id: i64,
        file: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MotsError {
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("degenerate kalman state: height {height}, aspect {aspect}")]
    DegenerateState { height: f64, aspect: f64 },

    #[error("detection {det_index} in frame {frame} has no embedding")]
    MissingEmbedding { frame: u32, det_index: usize },

    #[error("malformed trajectories: {0}")]
    Malformed(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: u32,
        #[source]
        source: Box<MotsError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MotsError {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        MotsError::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MotsError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = MotsError> = std::result::Result<T, E>;

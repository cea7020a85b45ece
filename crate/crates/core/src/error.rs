use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("landmark convention violated: expected {expected} points, found {found}")]
    ConventionViolation { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient frames: need at least {needed}, got {found}")]
    InsufficientFrames { needed: usize, found: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("texture bank is empty")]
    EmptyBank,

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite objective at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_frame(self, frame: usize) -> Self {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("frame {index}: file {path} does not exist")]
    MissingFrame { index: usize, path: PathBuf },

    #[error("frame {index}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("frame {index}: unparseable pixel data: {reason}")]
    BadPixels { index: usize, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{op}: shape mismatch (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("band-pass: upper edge {high_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    AboveNyquist { high_hz: f64, nyquist_hz: f64 },

    #[error("class_weights: training labels contain a single class")]
    SingleClass,

    #[error("split_speakers: need at least {needed} speakers, found {found}")]
    TooFewSpeakers { needed: usize, found: usize },

    #[error("weighted_bce: mask selects no samples")]
    EmptyMask,

    #[error("reassemble: {0}")]
    InconsistentChunks(String),

    #[error("unknown architecture {0:?}")]
    UnknownArch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {reason}")]
    Parse { context: String, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, reason: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            reason: reason.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::parse("csv", e)
    }
}

use std::path::PathBuf;

/// Crate-wide error type.
///
/// `Io` and `Format` map onto the CLI's file/parse exit codes; the remaining
/// variants signal algorithmic failure modes that callers are expected to
/// either handle (RANSAC consensus, flow loss) or treat as internal errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("sample position ({x}, {y}) outside image domain {width}x{height}")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("pyramid mismatch: {0}")]
    PyramidMismatch(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("need at least {needed} points, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },

    #[error("no consensus: best support {best} below required {required}")]
    NoConsensus { best: usize, required: usize },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("heatmap target has no peak cells")]
    NoPeaks,

    #[error("center ({x}, {y}) outside heatmap grid {width}x{height}")]
    CenterOutsideGrid {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("duplicate id {id} within a single frame")]
    DuplicateId { id: u64 },

    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(
        path: impl Into<PathBuf>,
        line: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {index} ({prev}) is incompatible with layer {next_index} ({next}): {detail}")]
    IncompatibleLayers {
        index: usize,
        prev: String,
        next_index: usize,
        next: String,
        detail: String,
    },

    #[error("invalid layer {index} ({layer}): {detail}")]
    InvalidLayer {
        index: usize,
        layer: String,
        detail: String,
    },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("invalid argument `{name}`: {detail}")]
    InvalidArgument { name: &'static str, detail: String },

    #[error("IDX parse error at byte {offset}: {detail}")]
    Idx { offset: usize, detail: String },

    #[error("checkpoint error at byte {offset}: {detail}")]
    Checkpoint { offset: usize, detail: String },

    #[error("affinity graph is not symmetric (|a_ij - a_ji| = {gap} at ({i}, {j}))")]
    AsymmetricGraph { i: usize, j: usize, gap: f64 },

    #[error("non-finite loss {value} ({context})")]
    NonFinite { context: String, value: f64 },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("fitnet strategy requires an adapter")]
    MissingAdapter,

    #[error("CSV error at line {line}: {detail}")]
    Csv { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by a bad configuration value rather than by the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidArgument { .. })
    }

    pub(crate) fn arg(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

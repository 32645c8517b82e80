use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("function returned non-finite value {value} at x = {x}")]
    Evaluation { x: f64, value: f64 },

    #[error("invalid scheme code {code:?}: {reason}")]
    SchemeParse {
        code: String,
        /// 1-based position of the offending character, if any.
        position: Option<usize>,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("label {label} out of range for {num_classes} classes (sample {index})")]
    LabelRange {
        label: usize,
        num_classes: usize,
        index: usize,
    },

    #[error("stale or missing forward cache: {0}")]
    State(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn mismatch(
        op: &'static str,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

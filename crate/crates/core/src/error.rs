use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op}: output {dim} would be {size} (must be >= 1)")]
    EmptyOutput {
        op: &'static str,
        dim: &'static str,
        size: isize,
    },

    #[error("batch norm channel {channel}: running_var + eps = {value} is not positive")]
    NonPositiveVariance { channel: usize, value: f32 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown variant {name:?}; valid names: {valid}")]
    UnknownVariant { name: String, valid: String },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("missing {count} parameter(s), first: {first:?}")]
    MissingParams { count: usize, first: Vec<String> },

    #[error("unexpected {count} parameter(s) in weight file, first: {first:?}")]
    UnexpectedParams { count: usize, first: Vec<String> },

    #[error("parameter {name}: shape {expected:?} expected, file has {actual:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("fusion diverged: max |fused - unfused| = {divergence:e} exceeds {tolerance:e}")]
    FusionDivergence { divergence: f32, tolerance: f32 },

    #[error("bench: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Shape {
            op,
            dim,
            expected,
            actual,
        }
    }
}

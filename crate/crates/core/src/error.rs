use thiserror::Error;

/// Errors raised across the simulation, training and transfer pipeline.
#[derive(Debug, Error)]
pub enum PsanError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero vector cannot be compared under the cosine metric")]
    ZeroVector,

    #[error("{list} path list has {count} entries, more than max_paths = {max}")]
    PathOverflow {
        list: &'static str,
        count: usize,
        max: usize,
    },

    #[error("configured embedding dimension {configured} disagrees with 8 x max_paths = {derived}")]
    EmbeddingDimension { configured: usize, derived: usize },

    #[error("invalid path component: {0}")]
    InvalidPath(String),

    #[error("static path set is empty; a direct path always exists")]
    EmptyStaticPaths,

    #[error("invalid grid shape {0:?}: every axis must be at least 1")]
    InvalidGridShape([usize; 3]),

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("receiver {0} has no training samples")]
    EmptyTrainSplit(usize),

    #[error("receiver {0} has no test samples")]
    EmptyTestSplit(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("negative argument {0} passed to the attention function")]
    NegativeArgument(f64),

    #[error(
        "server step size violates the simplex bound on row {row}: \
         2*alpha*lambda*sum R' = {value:.6} > 1 (largest admissible alpha = {max_alpha:.6e})"
    )]
    StepSizeViolation {
        row: usize,
        value: f64,
        max_alpha: f64,
    },

    #[error("server step forms disagree by {0:e}")]
    ServerStepMismatch(f64),

    #[error("need at least {needed} source receivers, got {actual}")]
    TooFewSources { needed: usize, actual: usize },

    #[error(
        "all training pairs share the same semantic similarity; \
         increase the scenario heterogeneity so semantic distances vary"
    )]
    DegeneratePairs,

    #[error("metric mismatch: mapping was fitted with {fitted}, requested {requested}")]
    MetricMismatch { fitted: String, requested: String },

    #[error("gradient descent oracle did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    OracleNotConverged { grad_norm: f64, iterations: usize },

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {kind}: {message}")]
    Malformed { kind: &'static str, message: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, PsanError>;

impl PsanError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PsanError::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

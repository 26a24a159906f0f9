use crate::ClassId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("channel {channel} contains no finite values")]
    AllMissingChannel { channel: usize },
    #[error("window of {window} samples is longer than the recording ({len} samples)")]
    WindowTooLong { window: usize, len: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("degenerate scenario split: {0}")]
    DegenerateSplit(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{context} has {count} samples, at least {need} are needed")]
    TooFewSamples { context: String, count: usize, need: usize },
    #[error("invalid spline knots: {0}")]
    BadKnots(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("anchor {anchor} has no positive sample")]
    NoPositive { anchor: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("model is frozen and cannot be modified")]
    FrozenModel,
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("artifact version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("class {class} has {have} replay samples, more than {support} are needed")]
    ClassTooSmall { class: ClassId, have: usize, support: usize },
    #[error("empty support set")]
    EmptySupport,
    #[error("replay buffer is empty")]
    EmptyReplay,
    #[error("class {0} supplied no embeddings")]
    EmptyClass(ClassId),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AllMissingChannel { .. } => "all_missing_channel",
            Error::WindowTooLong { .. } => "window_too_long",
            Error::EmptyInput(_) => "empty_input",
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::DegenerateSplit(_) => "degenerate_split",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::BadKnots(_) => "bad_knots",
            Error::InvalidConfig(_) => "invalid_config",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoPositive { .. } => "no_positive",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::FrozenModel => "frozen_model",
            Error::CorruptArtifact(_) => "corrupt_artifact",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::EmptySupport => "empty_support",
            Error::EmptyReplay => "empty_replay",
            Error::EmptyClass(_) => "empty_class",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

use alloc::string::String;

use thiserror::Error;

use crate::imaging::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image must have non-zero width and height")]
    EmptyImage,
    #[error("pixel count {got} does not match dimensions ({expected} expected)")]
    PixelCount { expected: usize, got: usize },
    #[error("box {bbox:?} exceeds {width}x{height} image")]
    BoxOutOfBounds { bbox: BBox, width: usize, height: usize },
    #[error("resize target must be at least 1x1")]
    ZeroTarget,
    #[error("dimension mismatch: image {image:?}, label map {labels:?}")]
    DimensionMismatch { image: (usize, usize), labels: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("cannot segment an empty image")]
    EmptyImage,
    #[error("k = {k} exceeds pixel count {pixels}")]
    TooManySegments { k: usize, pixels: usize },
    #[error("invalid SLIC configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("label map has {got} labels for {expected} pixels")]
    LabelCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("crop is {got:?}, provider expects {expected}x{expected}")]
    WrongInputSize { expected: usize, got: (usize, usize) },
    #[error("embedding has dimension {got}, provider declares {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("network failure: {0}")]
    Network(String),
    #[error("embed service returned status {0}")]
    Status(u16),
    #[error("malformed embed response: {0}")]
    MalformedBody(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("resolution list is empty")]
    NoResolutions,
    #[error("resolution K must be at least 1")]
    ZeroResolution,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{op}: index {index} out of range {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("parameter {0:?} not found")]
    UnknownParam(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("feature dimension {got} does not match d_model {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("expected {expected} resolutions, got {got}")]
    ResolutionCount { expected: usize, got: usize },
    #[error("prefix must be non-empty and start with BOS")]
    BadPrefix,
    #[error("prefix length {len} exceeds maximum {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("token id {0} outside vocabulary")]
    TokenOutOfRange(usize),
    #[error("soft routing: {0}")]
    Routing(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("unknown token id {0}")]
    UnknownId(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("example {0:?} has no reference captions")]
    NoCaptions(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step} (lr {lr})")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize, lr: f64 },
    #[error("learning-rate schedule is undefined at step 0")]
    StepZero,
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference corpus is empty")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
}

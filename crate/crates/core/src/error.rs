use std::io;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Training,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload is {actual} bytes, header implies {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("row index {0} referenced more than once")]
    DuplicateRow(usize),
    #[error("row index {row} out of range for n={n}")]
    RowOutOfRange { row: usize, n: usize },
    #[error("manifest has {manifest} rows, header declares n={header}")]
    RowCountMismatch { manifest: usize, header: usize },
    #[error("duplicate segment id {0:?}")]
    DuplicateSegment(String),
    #[error("label {0:?} is not 0 or 1")]
    InvalidLabel(String),
    #[error("speaker {0:?} has segments with different labels")]
    InconsistentSpeakerLabel(String),
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("embedding dimension is zero")]
    ZeroDimension,
    #[error("record {segment:?} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        segment: String,
        expected: usize,
        got: usize,
    },
    #[error("row {0} has zero norm, cosine distance undefined")]
    DegenerateVector(usize),
    #[error("all points coincide, bandwidth is zero")]
    DegenerateDataset,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("k={k} must satisfy 1 <= k < {limit}")]
    KTooLarge { k: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training mask selects no nodes")]
    EmptyMask,
    #[error("training masks overlap at node {0}")]
    OverlappingMasks(usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("class {class} has {got} speakers, need at least {needed}")]
    TooFewSpeakers {
        class: u8,
        got: usize,
        needed: usize,
    },
    #[error("speaker {0:?} has no segments")]
    EmptySpeaker(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable kebab-case identifier for machine consumption.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed-header",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::MalformedManifest { .. } => "malformed-manifest",
            Error::DuplicateRow(_) => "duplicate-row",
            Error::RowOutOfRange { .. } => "row-out-of-range",
            Error::RowCountMismatch { .. } => "row-count-mismatch",
            Error::DuplicateSegment(_) => "duplicate-segment",
            Error::InvalidLabel(_) => "invalid-label",
            Error::InconsistentSpeakerLabel(_) => "inconsistent-speaker-label",
            Error::EmptyDataset => "empty-dataset",
            Error::ZeroDimension => "zero-dimension",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::DegenerateVector(_) => "degenerate-vector",
            Error::DegenerateDataset => "degenerate-dataset",
            Error::TooFewPoints { .. } => "too-few-points",
            Error::KTooLarge { .. } => "k-too-large",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::EmptyMask => "empty-mask",
            Error::OverlappingMasks(_) => "overlapping-masks",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::InvalidConfig(_) => "invalid-config",
            Error::TooFewSpeakers { .. } => "too-few-speakers",
            Error::EmptySpeaker(_) => "empty-speaker",
            Error::MalformedCheckpoint(_) => "malformed-checkpoint",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::TrainingDiverged { .. } | Error::EmptyMask | Error::OverlappingMasks(_) => {
                ErrorClass::Training
            }
            Error::InvalidConfig(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

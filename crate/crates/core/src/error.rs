use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Solver,
    Detector,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {0} appears in the grid but not in the label table")]
    UnknownLabel(u8),
    #[error("label {0:?} is not part of the body-part vocabulary")]
    NonCanonicalLabel(String),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("unsupported abstraction level {0}")]
    UnsupportedLevel(u8),

    #[error("pixel set is empty")]
    EmptyPixelSet,
    #[error("part {0} is not present in the segmentation")]
    PartAbsent(u8),
    #[error("no background pixels available to fit a noise model")]
    NoBackgroundPixels,
    #[error("presence vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("detector protocol error: {0}")]
    Protocol(String),
    #[error("detector did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("detector process exited: {0}")]
    DetectorCrash(String),
    #[error("detector speaks {got:?}, expected major version {expected:?}")]
    VersionMismatch { expected: String, got: String },
    #[error("invalid detector spec: {0}")]
    DetectorSpec(String),

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("coalition size {size} has no finite kernel weight for {parts} parts")]
    DegenerateCoalition { parts: usize, size: usize },
    #[error("sample budget {0} is too small (need at least 2)")]
    BudgetTooSmall(usize),
    #[error("underdetermined regression: {have} usable samples, need {need}")]
    Underdetermined { have: usize, need: usize },
    #[error("regression system is singular")]
    SingularSystem,
    #[error("{parts} parts exceed the exact-enumeration limit of {limit}")]
    TooManyParts { parts: usize, limit: usize },
    #[error("instance has no visible parts")]
    NoActiveParts,

    #[error("result parts do not match the segmentation: {0}")]
    PartMismatch(String),
    #[error("result carries no bootstrap errors")]
    MissingErrors,
    #[error("results mix abstraction levels {0} and {1}")]
    MixedAbstraction(u8, u8),
    #[error("no inputs given")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::UnknownLabel(_) => "unknown_label",
            Error::NonCanonicalLabel(_) => "non_canonical_label",
            Error::InvalidSegmentation(_) => "invalid_segmentation",
            Error::UnsupportedLevel(_) => "unsupported_level",
            Error::EmptyPixelSet => "empty_pixel_set",
            Error::PartAbsent(_) => "part_absent",
            Error::NoBackgroundPixels => "no_background_pixels",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Protocol(_) => "protocol_error",
            Error::Timeout(_) => "timeout",
            Error::DetectorCrash(_) => "detector_crash",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::DetectorSpec(_) => "detector_spec",
            Error::InvalidBox(_) => "invalid_box",
            Error::DegenerateCoalition { .. } => "degenerate_coalition",
            Error::BudgetTooSmall(_) => "budget_too_small",
            Error::Underdetermined { .. } => "underdetermined",
            Error::SingularSystem => "singular_system",
            Error::TooManyParts { .. } => "too_many_parts",
            Error::NoActiveParts => "no_active_parts",
            Error::PartMismatch(_) => "part_mismatch",
            Error::MissingErrors => "missing_errors",
            Error::MixedAbstraction(..) => "mixed_abstraction",
            Error::EmptyInput => "empty_input",
            Error::Config(_) => "config_error",
            Error::Io(_) => "io_error",
            Error::Image(_) => "image_error",
            Error::Json(_) => "json_error",
            Error::Csv(_) => "csv_error",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::DetectorSpec(_) | Error::UnsupportedLevel(_) => {
                ErrorKind::Config
            }
            Error::Protocol(_)
            | Error::Timeout(_)
            | Error::DetectorCrash(_)
            | Error::VersionMismatch { .. } => ErrorKind::Detector,
            Error::Io(_) | Error::Image(_) | Error::Json(_) | Error::Csv(_) => ErrorKind::Io,
            _ => ErrorKind::Solver,
        }
    }
}

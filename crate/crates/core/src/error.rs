use thiserror::Error;

/// Errors produced by the learning and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("value {value} at row {row}, column {col} is not a spin (+1/-1)")]
    NotASpin { row: usize, col: usize, value: f64 },

    #[error("exhaustive enumeration needs {needed} binary variables, cap is {cap}")]
    EnumerationCap { needed: usize, cap: usize },

    #[error("neighborhood of node {node} has {size} elements, cap is {cap}; raise eta to shrink it")]
    NeighborhoodTooLarge { node: usize, size: usize, cap: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("label class {label:+} has {count} samples, at least {required} required")]
    LabelClassTooSmall {
        label: i8,
        count: usize,
        required: usize,
    },

    #[error("insufficient samples: {available} available, {required:.0} required")]
    InsufficientSamples { available: usize, required: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("missing neighborhood for node {0}")]
    MissingNeighborhood(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {}", .0.iter().map(|i| format!("{}: {}", i.path, i.message)).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NotASpin { .. } => "not-a-spin",
            Error::EnumerationCap { .. } => "enumeration-cap",
            Error::NeighborhoodTooLarge { .. } => "neighborhood-too-large",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::EmptyDataset => "empty-dataset",
            Error::MissingLabels => "missing-labels",
            Error::LabelClassTooSmall { .. } => "label-class-too-small",
            Error::InsufficientSamples { .. } => "insufficient-samples",
            Error::Infeasible(_) => "infeasible",
            Error::MissingNeighborhood(_) => "missing-neighborhood",
            Error::Parse(_) => "parse",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

/// One failed check of a configuration document, located by its dotted key path.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

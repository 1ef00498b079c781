use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid label {label} for {space}")]
    InvalidLabel { label: i32, space: String },

    #[error("training diverged at epoch {epoch}: non-finite loss (learning rate too high?)")]
    Diverged { epoch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("class {0} has no samples")]
    EmptyClass(i32),

    #[error("unknown class {0}")]
    UnknownClass(i32),

    #[error("group {group} (attribute {attribute}, label {label}) has no samples")]
    EmptyGroup { group: usize, attribute: i32, label: i32 },

    #[error("dataset has no group ids")]
    MissingGroups,

    #[error("class {class} has {available} samples, fewer than {k} mixture components")]
    TooFewSamples { class: i32, available: usize, k: usize },

    #[error("mixture component {component} of class {class} degenerated after {retries} re-seeds")]
    DegenerateComponent { class: i32, component: usize, retries: usize },

    #[error("input lies outside the box at coordinate {0}")]
    OutsideBox(usize),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("wrong magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("item count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used for CLI error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::WrongMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Container { .. }
            | Error::Json(_) => "schema",
            Error::Io(_) => "io",
            Error::Sample { source, .. } => source.category(),
            _ => "stage",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("spatial collapse at stage `{stage}`: input {input}x{input} cannot pass a stride-{stride} stage")]
    SpatialCollapse {
        stage: String,
        input: usize,
        stride: usize,
    },

    #[error("hash vector of sample {0} has zero norm")]
    ZeroNorm(usize),

    #[error("could not construct hash centers for {classes} classes at {bits} bits after {rounds} rounds (best minimum distance {best_min_distance})")]
    HashCenters {
        classes: usize,
        bits: usize,
        rounds: usize,
        best_min_distance: usize,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing file {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category label used for one-line error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::NonFinite(_) | Error::ZeroNorm(_) => "input",
            Error::Config(_) => "config",
            Error::SpatialCollapse { .. } => "architecture",
            Error::HashCenters { .. } => "hash-centers",
            Error::Dataset(_) | Error::Missing(_) => "data",
            Error::Format { .. } | Error::Truncated { .. } => "format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) | Error::Json(_) => "io",
        }
    }

    /// Process exit status for this error's category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" | "architecture" | "hash-centers" => 2,
            "data" => 3,
            "format" | "checkpoint" => 4,
            "input" => 5,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

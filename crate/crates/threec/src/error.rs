//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// File does not start with the `VOL1` magic.
    #[error("bad magic: expected VOL1, found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// File ended before the declared voxel payload.
    #[error("truncated file: expected {expected} bytes of voxel data, got {got}")]
    TruncatedFile { expected: u64, got: u64 },

    /// Dtype code in the header is not one of the defined codes.
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    /// Declared dimensions are zero or exceed the configured voxel budget.
    #[error("dims overflow: {z}x{y}x{x} exceeds limit {limit}")]
    DimsOverflow { z: u64, y: u64, x: u64, limit: u64 },

    /// A stack violated a type invariant (e.g. non-finite scalar values).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// Generator config cannot be realized within the requested dims.
    #[error("config infeasible: {0}")]
    ConfigInfeasible(String),

    /// Requested codebook size exceeds alphabet capacity l^k.
    #[error("capacity exceeded: need {needed} codewords but l^k = {capacity}")]
    CapacityExceeded { needed: u64, capacity: u64 },

    /// A section contains a label outside the codebook's range.
    #[error("label {label} out of range (codebook has {n_labels} labels)")]
    LabelOutOfRange { label: u32, n_labels: u32 },

    /// Two grids that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Decode input is missing one or more digit images.
    #[error("missing digit: {0}")]
    MissingDigit(String),

    /// Oracle classifier invoked without ground truth in the context.
    #[error("missing ground truth for oracle classifier")]
    MissingGroundTruth,

    /// Metric requested on an empty contingency table.
    #[error("empty contingency table")]
    EmptyTable,

    /// Revisit ratio of zero means no pixels are ever found; cost undefined.
    #[error("rho = 0: cost model undefined")]
    RhoZero,

    /// Bad runtime configuration (unknown keys, conflicting inputs, ...).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A sub-module error annotated with the pipeline stage it occurred in.
    #[error("pipeline stage `{stage}`: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Pipeline {
            stage,
            source: Box::new(self),
        }
    }
}

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthonormality deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("time {t} lies outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("degenerate residue {index}: {reason}")]
    DegenerateResidue { index: usize, reason: &'static str },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("PDB line {line}: {msg}")]
    Pdb { line: usize, msg: String },

    #[error("residue {index} is missing backbone atom {atom}")]
    MissingAtom { index: usize, atom: &'static str },

    #[error("coordinate {value} does not fit the PDB coordinate column")]
    CoordinateOverflow { value: f64 },

    #[error("too few points: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("embedding width mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("backward called without a recorded forward tape")]
    NoTape,

    #[error("every residue of item {0} is masked out of the loss")]
    AllResiduesMasked(usize),

    #[error("all rewards are zero after normalization")]
    ZeroRewards,

    #[error("invalid task: {0}")]
    Task(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotOrthonormal { .. }
            | Error::NonFinite(_)
            | Error::TimeOutOfRange { .. }
            | Error::ZeroRewards
            | Error::NoTape => ErrorCategory::Numeric,
            Error::InvalidSequence(_) | Error::Task(_) | Error::Config(_) | Error::DimMismatch { .. } => {
                ErrorCategory::Config
            }
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

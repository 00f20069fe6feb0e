use thiserror::Error;

pub type Result<T> = std::result::Result<T, LordError>;

#[derive(Debug, Error)]
pub enum LordError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("rank error: requested rank {rank}, valid range is 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("statistics are empty (no tokens observed)")]
    EmptyStats,

    #[error("calibration insufficient for layer `{layer}`: {reason}")]
    CalibrationInsufficient { layer: String, reason: String },

    #[error("group error: {0}")]
    Group(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unknown layer or target `{0}`")]
    UnknownName(String),

    #[error("plan does not match model: {0}")]
    PlanMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: tensor `{tensor}`: {reason}")]
    Corruption { tensor: String, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Format,
    Numerical,
}

impl LordError {
    pub fn class(&self) -> ErrorClass {
        use LordError::*;
        match self {
            Numerical(_) | EmptyStats | CalibrationInsufficient { .. } => ErrorClass::Numerical,
            Format(_) | Corruption { .. } | Version { .. } | Io(_) | Shape(_) | PlanMismatch(_) => {
                ErrorClass::Format
            }
            Rank { .. } | Group(_) | Policy(_) | Input(_) | UnknownName(_) => ErrorClass::Usage,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        LordError::Shape(msg.into())
    }
}

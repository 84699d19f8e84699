use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A run configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The energy density returned NaN or an infinity at a quadrature point.
    #[error("non-finite energy density at x = {x:?} (value {value})")]
    NonFinite { x: Vec<f64>, value: f64 },

    /// An enumeration would exceed its configured candidate cap.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// No transverse grid layer satisfies the weighted-slice threshold.
    #[error(
        "no grid layer in [{lo}, {hi}] satisfies (h+eta-y) g(y) <= {threshold:e} \
         (best {best:e}); refine n_y or increase eta"
    )]
    NoQualifyingLayer {
        lo: f64,
        hi: f64,
        threshold: f64,
        best: f64,
    },

    /// A patchwork window contains no almost period.
    #[error("patchwork cell {cell:?} has no almost period in its window")]
    UncoveredCell { cell: Vec<usize> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::DimensionMismatch(_) => {
                ErrorClass::Validation
            }
            _ => ErrorClass::Numerical,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

use thiserror::Error;

/// Errors raised by the model, the estimators, and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular evaluation point: {0}")]
    Singularity(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("target has no Hessian")]
    MissingHessian,

    #[error("bad IDX magic number {0:#010x}")]
    BadMagic(u32),

    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("IDX dimensions overflow the addressable size")]
    DimOverflow,

    #[error("input has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("model payload checksum mismatch")]
    Checksum,

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Broad classes of failure, used by the CLI and the C API to pick exit/status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_) | Error::MissingHessian => ErrorClass::Usage,
            Error::Domain(_) | Error::NonFinite(_) | Error::Singularity(_) | Error::GradientCheck(_) => {
                ErrorClass::Numeric
            }
            Error::BadMagic(_)
            | Error::Truncated { .. }
            | Error::DimOverflow
            | Error::TrailingBytes { .. }
            | Error::UnsupportedVersion(_)
            | Error::Checksum
            | Error::ModelFormat(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorClass::Data,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, got })
    }
}

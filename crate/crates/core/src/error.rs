use crate::tensor::Shape;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Shape, Shape),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("bad magic: expected RT01, found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported dtype tag {0}")]
    BadDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("extent overflow: {0:?} does not fit in memory")]
    ExtentOverflow([u64; 4]),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown label color ({r},{g},{b}) at row {row}, column {col}")]
    UnknownColor {
        r: u8,
        g: u8,
        b: u8,
        row: usize,
        col: usize,
    },

    #[error("{pixels} pixels exceed the brute-force guard of {limit}")]
    GuardExceeded { pixels: usize, limit: usize },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

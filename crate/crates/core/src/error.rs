use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the grading core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported lattice size {0}: only 16^3 lattices reshape to a 64x64 image")]
    UnsupportedSize(usize),

    #[error("cube parse error at line {line}: {kind}")]
    CubeParse { line: usize, kind: CubeErrorKind },

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("degenerate embedding for {clip} frame {index}: zero norm")]
    DegenerateEmbedding { clip: &'static str, index: usize },

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("prompt cannot be matched against the catalog: {0}")]
    UnmatchablePrompt(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// What went wrong while reading a `.cube` file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CubeErrorKind {
    #[error("missing LUT_3D_SIZE")]
    MissingSize,
    #[error("LUT_3D_SIZE given more than once")]
    DuplicateSize,
    #[error("LUT_3D_SIZE {0} outside [2, 256]")]
    SizeOutOfRange(String),
    #[error("expected {expected} data lines, found {found}")]
    WrongDataCount { expected: usize, found: usize },
    #[error("non-numeric token {0:?}")]
    NonNumeric(String),
    #[error("non-finite value")]
    NonFinite,
    #[error("expected {expected} values, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("DOMAIN_MIN must be below DOMAIN_MAX on every channel")]
    BadDomain,
    #[error("unknown keyword {0:?}")]
    UnknownKeyword(String),
    #[error("1D LUTs are not supported")]
    Unsupported1D,
    #[error("malformed TITLE line")]
    BadTitle,
    #[error("invalid UTF-8")]
    InvalidUtf8,
}

use thiserror::Error;

/// Errors surfaced by the transport library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("incompatible size: {target_n} does not divide {n}")]
    IncompatibleSize { n: usize, target_n: usize },

    #[error("grid has zero total mass")]
    ZeroMass,

    #[error("non-positive density {value:e} at cell ({row}, {col})")]
    NonPositiveDensity { row: usize, col: usize, value: f64 },

    #[error(
        "mass mismatch{}: right-hand side sums to {imbalance:e} (tolerance {tol:e}); \
         adjacent slices carry different total mass",
        slice_suffix(.slice)
    )]
    MassMismatch {
        slice: Option<usize>,
        imbalance: f64,
        tol: f64,
    },

    #[error(
        "solver divergence{}: relative residual {residual:e} after {iterations} iterations",
        slice_suffix(.slice)
    )]
    SolverDivergence {
        slice: Option<usize>,
        residual: f64,
        iterations: usize,
    },

    #[error(
        "disconnected domain{}: obstacle layout requires mass to cross a wall",
        slice_suffix(.slice)
    )]
    DisconnectedDomain { slice: Option<usize> },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("image is not square: {width}x{height}")]
    NonSquare { width: usize, height: usize },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

fn slice_suffix(slice: &Option<usize>) -> String {
    match slice {
        Some(t) => format!(" at slice {t}"),
        None => String::new(),
    }
}

impl Error {
    /// Stable machine-parseable code, one token per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::IncompatibleSize { .. } => "IncompatibleSize",
            Error::ZeroMass => "ZeroMass",
            Error::NonPositiveDensity { .. } => "NonPositiveDensity",
            Error::MassMismatch { .. } => "MassMismatch",
            Error::SolverDivergence { .. } => "SolverDivergence",
            Error::DisconnectedDomain { .. } => "DisconnectedDomain",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::NonSquare { .. } => "NonSquare",
            Error::CorruptHeader(_) => "CorruptHeader",
            Error::Io(_) => "IoFailure",
            Error::Config(_) => "ConfigError",
        }
    }

    /// Attach a time-slice index to solver-stage errors that carry one.
    pub(crate) fn with_slice(self, t: usize) -> Self {
        match self {
            Error::MassMismatch {
                imbalance, tol, ..
            } => Error::MassMismatch {
                slice: Some(t),
                imbalance,
                tol,
            },
            Error::SolverDivergence {
                residual,
                iterations,
                ..
            } => Error::SolverDivergence {
                slice: Some(t),
                residual,
                iterations,
            },
            Error::DisconnectedDomain { .. } => Error::DisconnectedDomain { slice: Some(t) },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

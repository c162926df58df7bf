use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("adjacency matrix is not primitive (no power up to {bound} is positive)")]
    NonPrimitive { bound: usize },

    #[error("adjacency matrix has an empty row or column at symbol {symbol}")]
    ZeroRowOrColumn { symbol: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("generator {index} is not invertible (singular value ratio {ratio:e})")]
    NotInvertible { index: usize, ratio: f64 },

    #[error("product is ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("top singular direction is not defined (relative gap {gap:e})")]
    DegenerateGap { gap: f64 },

    #[error("dimension {d} is not supported by this operation")]
    DimensionUnsupported { d: usize },

    #[error("no convergence after {iterations} iterations (last increment {last_increment:e})")]
    NoConvergence { iterations: usize, last_increment: f64 },

    #[error("grid has {points} points, at least 3 are needed")]
    InsufficientGrid { points: usize },

    #[error("curve is not convex: second difference {value:e} at t = {t}")]
    NonConvexInput { t: f64, value: f64 },

    #[error("transition support is reducible")]
    Reducible,

    #[error("{count} words exceed the enumeration cap {cap}")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

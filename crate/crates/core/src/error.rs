use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("friction violation: |Fx| = {fx:.3} N exceeds mu*Fz = {limit:.3} N")]
    FrictionViolation { fx: f64, limit: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("ambiguous projection: minima at s = {s_a:.3} m and s = {s_b:.3} m are equally close")]
    AmbiguousProjection { s_a: f64, s_b: f64 },

    #[error("path too short: horizon needs {needed:.2} m but path ends at {available:.2} m")]
    PathTooShort { needed: f64, available: f64 },

    #[error("infeasible initial state: {0}")]
    InfeasibleInitialState(String),

    #[error("infeasible subproblem: {0}")]
    Infeasible(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),
}

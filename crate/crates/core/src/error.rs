use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {field} {constraint}")]
    InvalidGrid {
        field: &'static str,
        constraint: String,
    },

    #[error("maturity warp is not strictly increasing in h^2 on cell {cell} (u = {lower} .. {upper}, h^2 = {h_sq_lower} .. {h_sq_upper})")]
    NonMonotoneWarp {
        cell: usize,
        lower: f64,
        upper: f64,
        h_sq_lower: f64,
        h_sq_upper: f64,
    },

    #[error("invalid maturity warp: {0}")]
    InvalidWarp(String),

    #[error("warp derivative unavailable at maturity node {node} (u = {maturity})")]
    MissingDerivative { node: usize, maturity: f64 },

    #[error("non-finite {quantity} at time node {time_node}, maturity node {maturity_node}")]
    NonFinite {
        quantity: &'static str,
        time_node: usize,
        maturity_node: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weights sum to zero")]
    ZeroWeights,

    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("refinement study needs at least 3 usable levels, got {0}")]
    TooFewLevels(usize),

    #[error("configuration error in `{field}`: {constraint}")]
    Config { field: String, constraint: String },

    #[error("worker pool: {0}")]
    Pool(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}

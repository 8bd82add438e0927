use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of a closed-form function.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    /// A feature or kernel does not fit the grid it is applied to.
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("non-finite sample at flat index {0}")]
    NonFinite(usize),
    #[error("invalid scale grid: {0}")]
    Grid(String),
    #[error("empty mask")]
    EmptyMask,
    /// A root search or model evaluation failed to produce a valid result.
    #[error("numerical error: {0}")]
    Numerical(String),
}

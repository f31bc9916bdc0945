use thiserror::Error;

#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid mesh parameter: {0}")]
    InvalidMesh(String),

    #[error("fine mesh with n = {fine} does not refine coarse mesh with n = {coarse}")]
    NotNested { coarse: usize, fine: usize },

    #[error("mesh with n = {mesh_n} does not resolve coefficient grid with n = {grid_n}")]
    Resolution { mesh_n: usize, grid_n: usize },

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LodError>;

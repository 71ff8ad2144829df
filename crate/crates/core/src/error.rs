use thiserror::Error;

use crate::integrators::FixedPointReport;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("kernel evaluated at {x} outside its tabulated range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("negative cell average {value:e} for {species} in cell {cell}")]
    NegativeInitialData {
        species: &'static str,
        cell: usize,
        value: f64,
    },

    #[error("domain [{}, {}] does not match [{}, {}]", .coarse[0], .coarse[1], .fine[0], .fine[1])]
    DomainMismatch { fine: [f64; 2], coarse: [f64; 2] },

    #[error("operands were built on different meshes")]
    MeshMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("zero pivot in tridiagonal solve at row {row}")]
    SingularSystem { row: usize },

    #[error("fixed point iteration did not converge after {} iterations (residual {:e})", .0.iterations, .0.residual)]
    FixedPointDiverged(Box<FixedPointReport>),

    #[error("blow-up at t = {time}: non-finite value in the state")]
    BlowUp { time: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

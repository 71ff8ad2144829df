//! Finite volume solver for two interacting species with nonlinear self-
//! and cross-diffusion on a bounded interval with no-flux boundaries.

pub mod config;
pub mod error;
pub mod experiments;
pub mod integrators;
pub mod interaction;
pub mod kernels;
pub mod mesh;
pub mod quadrature;
pub mod scheme;
pub mod state;

#[cfg(doctest)]
mod book;

pub use config::{March, Simulation, SimulationConfig};
pub use error::{Error, Result};
pub use integrators::{
    check_cfl, integrate, integrate_collect, integrate_until, stable_substep, step_implicit, step_rk4,
    tridiagonal_solve, FixedPointReport, Method, RunStats, TimeGrid,
};
pub use interaction::{Assembly, InteractionSet};
pub use kernels::{precompute_weights, ConvolutionMatrix, KernelSet, KernelSpec};
pub use mesh::{build_graded_mesh, build_uniform_mesh, Mesh1D, MeshId};
pub use scheme::{assemble_fields, assemble_fluxes, rhs, FieldSet, FluxField, Model};
pub use state::{InitialProfile, State};

//! Numerical laboratory for symmetric Dirichlet forms on finite weighted
//! graphs: intrinsic metrics, heat kernels, functional-inequality constants
//! and short-time large-deviation probes.

pub mod asymptotics;
pub mod energy;
pub mod experiment;
pub mod error;
pub mod fdd;
pub mod fit;
pub mod form;
pub mod inequalities;
pub mod linalg;
pub mod metric;
pub mod propagate;
pub mod simulator;
pub mod space;

pub use error::{Error, Result};
pub use form::{
    build_spectral_cache, dirichlet_energy, energy_density, generator_apply, KernelValue,
    SpectralCache,
};
pub use space::{
    build_grid_2d, build_lattice_1d, build_two_state, validate_space, Region, SpaceDescriptor,
    StateSpace, ValidationReport, Vertex,
};

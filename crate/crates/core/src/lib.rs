//! Numerical laboratory connecting Nelson's stochastic mechanics with the
//! Wigner phase-space picture of one-dimensional quantum systems.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: units, grids, potentials, sampled fields and the momentum transform.
//! - [`schrodinger`]: eigenstates, unitary and parabolic evolution, polar form and drift fields.
//! - [`nelson`]: diffusion ensembles and forward/backward drift and diffusion estimators.
//! - [`phase_space`]: characteristic function, Wigner density, phase-space amplitudes.
//! - [`dispersion`]: momentum dispersion, minimum time interval, force balance.
//! - [`hydro`]: direct integration of the coupled systematic/osmotic velocity equations.
//! - [`scenario`]: configuration, orchestration and output of complete runs.

pub mod diff;
pub mod dispersion;
pub mod error;
pub mod exec;
pub mod grid;
pub mod hydro;
pub mod linalg;
pub mod nelson;
pub mod phase_space;
pub mod scenario;
pub mod schrodinger;
pub mod spectral;

pub use error::{LabError, Result};
pub use exec::Execution;
pub use grid::{make_grid, ComplexField, Potential, RealField, SimUnits, SpatialGrid};

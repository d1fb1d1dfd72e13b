//! Numerical laboratory for the spatially homogeneous Boltzmann equation for
//! Fermi-Dirac particles with moderately soft potentials.

pub mod collision;
pub mod diagnostics;
pub mod equilibria;
pub mod error;
pub mod functionals;
pub mod initial;
pub mod integrator;
pub mod kernel;
pub mod quadrature;

pub use error::{Error, Result};

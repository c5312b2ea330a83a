//! Numerical toolkit for state-dependent time-inconsistent stochastic control.
//!
//! * [`model`] – controlled diffusions, cost structure, extended Hamiltonian.
//! * [`riccati`] – backward Riccati systems and the equilibrium, naive and
//!   precommitted feedback laws of the scalar regulator.
//! * [`evaluation`] – exact expected costs from the moment equations.
//! * [`montecarlo`] – seeded Euler–Maruyama simulation with common random numbers.
//! * [`hjbgrid`] – finite-difference solver for the extended HJB system.
//! * [`validation`] – the acceptance suite shared by tests and the CLI.

pub mod error;
pub mod evaluation;
pub mod hjbgrid;
pub mod model;
pub mod montecarlo;
pub mod riccati;
pub mod validation;

pub use error::{Error, Result};

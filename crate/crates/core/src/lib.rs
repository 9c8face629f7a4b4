//! Numerical laboratory for a linear-quadratic mean field game with delayed
//! controls: kernel solver, value functions, particle simulation, N → ∞
//! convergence and an independent lag-chain oracle.

pub mod checks;
pub mod cli;
pub mod convergence;
pub mod error;
pub mod hilbert;
pub mod oracle;
pub mod riccati;
pub mod sim;
pub mod value;

pub use error::{Error, Result};

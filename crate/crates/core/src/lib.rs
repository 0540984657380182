//! Time dynamics of Fermi–Hubbard models with imaginary on-site interaction,
//! computed by sampling mixed-unitary dephasing channels of free fermions.

pub mod channel;
pub mod duality;
pub mod error;
pub mod experiment;
pub mod fock;
pub mod landscape;
pub mod lattice;
pub mod linalg;
pub mod slater;

pub use error::{Error, Result};

//! Simulation toolkit for photonic quantum-to-quantum Bernoulli factories:
//! dual-rail qubit field operations, their linear-optical building blocks, a
//! programmable six-mode mesh, partial-distinguishability noise and the
//! count-based fidelity estimators.

pub mod blocks;
pub mod error;
pub mod fock;
pub mod mesh;
pub mod noise;
pub mod pipeline;
pub mod qubit;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;

//! Independent verification machinery: exact fault-path enumeration,
//! Pauli-frame Monte Carlo, and classical reversible simulation.
//!
//! Everything here is deliberately independent of the closed forms it checks:
//! the enumerator and the Monte Carlo trace actual fault propagation through
//! the emitted instruction sequences.

mod enumerate;
mod frame;
mod monte_carlo;
mod reversible;

pub use enumerate::{enumerate_fault_paths, FaultPathReport, Monomial};
pub use frame::{pauli_propagate, FrameError, PauliFrame};
pub use monte_carlo::{
    mc_cat_block, mc_stabilizer_readout, mc_toffoli_block, FaultMode, McEstimate,
};
pub use reversible::{reversible_simulate, ReversibleError};

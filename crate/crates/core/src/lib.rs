//! Real-time walker population dynamics for time-local master equations.
//!
//! The density matrix of an open n-qubit system is represented by a few
//! sparse, integer-valued populations of signed walkers. Each time step
//! spawns walkers through the vectorized Liouvillian by binomial and
//! multinomial sampling and annihilates opposite signs on merge. Averages
//! over samples (and replicas) estimate `ρ(t)` without bias; a matrix-free
//! deterministic integrator provides exact reference curves for small n.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuits;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod liouvillian;
pub mod operators;
pub mod redfield;
pub mod rng;
pub mod snapshot;
pub mod stepper;
pub mod walkers;

pub use error::{Error, Result};
pub use liouvillian::{ColumnOracle, LindbladChannel, Liouvillian, LiouvillianColumn, Location};
pub use operators::{OperatorModel, OperatorTerm, SingleQubitMatrix, C64};

//! Spectral and Monte Carlo computation of quasi-ergodic measures for randomly
//! perturbed open maps.
//!
//! The crate is organised around the annealed, weighted, killed transfer operator
//! of a map with a hole:
//!
//! * [`dynamics`] holds the deterministic maps, the additive noise model, weight
//!   fields and box regions, plus the builtin oracle systems.
//! * [`ulam`] discretises the operator on a box grid into a sparse matrix.
//! * [`spectral`] extracts the dominant eigenvalue, the right eigenfunction and the
//!   left quasi-stationary density, and assembles the quasi-ergodic measure.
//! * [`conditioned_mc`] simulates the killed weighted process with an interacting
//!   particle ensemble and estimates conditioned Birkhoff averages and escape rates.
//! * [`equilibrium`] provides symbolic oracles (pressure and Gibbs measures on
//!   subshifts of finite type) and measure-comparison metrics.
//! * [`filtration`] orders basic sets of a multi-repeller system and solves the
//!   stratified spectral problems.
//! * [`io`] reads and writes the matrix and vector exchange formats.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioned_mc;
pub mod dynamics;
pub mod equilibrium;
mod error;
pub mod filtration;
pub mod io;
pub mod rng;
pub mod spectral;
pub mod ulam;

pub use conditioned_mc::{
    escape_rate_mc, run_conditioned, starting_point_independence, EnsembleConfig, EnsembleStats,
    Observable, Start,
};
pub use dynamics::{
    AxisBox, BoundaryRule, BuiltinSystem, Cutoff, Dim, LogWeight, MapSystem, NoiseModel, Point,
    RegionSpec, State, WeightField,
};
pub use equilibrium::{MarkovModel, ReferenceMeasure, TestDictionary};
pub use error::{Error, Result};
pub use filtration::{ConnectionGraph, FiltrationOrder};
pub use spectral::{SolverOptions, SpectralTriple};
pub use ulam::{AnnealedMatrix, GridPartition};

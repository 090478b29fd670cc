//! Simulation toolkit for the uniform spanning tree on the square lattice and
//! the loop-erased random walk.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: points, paths, regions and boundaries;
//! * [`walker`]: simple random walk, loop erasure, infinite-LERW sampling;
//! * [`graph`] and [`ust`]: Wilson's algorithm on finite graphs and on
//!   lattice windows, producing [`ust::TreeWindow`]s;
//! * [`metrics`]: intrinsic balls, effective resistance, good-ball checks;
//! * [`treewalk`]: the random walk on a sampled tree and its observables;
//! * [`estimators`]: scaling tables, exponent fits, scaling functions, tails
//!   and the consolidated dimension report;
//! * [`oracle`]: exact computations on tiny graphs used as ground truth;
//! * [`experiment`]: seeds, worker pools and output files.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod graph;
pub mod lattice;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod treewalk;
pub mod ust;
pub mod walker;

pub use error::{Error, Result};
pub use lattice::{LatticePath, LatticeRegion, Point};
pub use rng::RandomSource;

//! Invasion percolation on the square lattice, with the static Bernoulli
//! percolation toolkit needed to study its near-critical behaviour.
//!
//! The crate is organised bottom-up:
//! - [`lattice`]: geometry of Z² and its planar dual;
//! - [`weights`]: deterministic i.i.d. edge weights (counter-based hashing);
//! - [`invasion`]: the greedy invasion engine and its traces;
//! - [`percolation`]: finite-box Bernoulli samples, crossings, correlation
//!   length, arm probabilities, annulus circuits;
//! - [`observables`]: acceptance profile, radius and stabilization counts,
//!   outlets, and the composite annulus event detectors;
//! - [`experiments`]: reproducible batch runner behind the `invadelab` CLI.

pub mod error;
pub mod experiments;
pub mod invasion;
pub mod lattice;
pub mod observables;
pub mod percolation;
pub mod weights;

pub use error::{Error, Result};

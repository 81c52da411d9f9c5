//! Estimation toolkit for slow-mixing Markov channels with long output
//! memory.
//!
//! The crate models stationary processes whose conditional law depends on a
//! bounded window of past outputs through a full context tree, and channels
//! whose output distribution depends on the current input plus such a
//! window.  On top of the model layer it provides:
//!
//! * depth-`k` aggregation of states and channels, with the exact identities
//!   aggregation satisfies ([`aggregation`]);
//! * dependency-decay profiles and their summed tails, which calibrate how
//!   fast the influence of old outputs dies off ([`decay`]);
//! * information rates of output-memory channels under i.i.d. inputs
//!   ([`inforate`]);
//! * a reproducible trace simulator and context/input counting
//!   ([`simulator`]);
//! * naive conditional estimators with finite-sample L1 certificates, the
//!   well-sampled ("good") state set, and concentration certificates for
//!   state-occupancy ratios ([`estimator`]);
//! * an input-conditioned context-tree-weighting probability assignment
//!   whose redundancy bound powers the L1 certificate ([`ctw`]);
//! * maximal couplings of the chain restricted to good states, used to
//!   validate the concentration constants empirically ([`coupling`]).
//!
//! Everything is deterministic given a seed; see [`rng`] for the stream
//! layout.

pub mod aggregation;
pub mod channel;
pub mod coupling;
pub mod ctw;
pub mod decay;
pub mod estimator;
pub mod fixtures;
pub mod inforate;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod strings;
pub mod tree;

pub use strings::{Alphabet, ContextString};

/// Library version, re-exported so front ends can stamp their reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

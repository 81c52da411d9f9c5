//! Deterministic random streams.
//!
//! All sampling in this crate draws from ChaCha8, a counter-based generator:
//! a master 64-bit seed plus a stream id fully determine every variate, so
//! traces and experiments are reproducible across platforms and runs.
//! Distinct roles get distinct stream ids rather than sharing one sequence,
//! which keeps the input draws of a simulation unchanged when, say, only the
//! output sampling logic consumes a different number of variates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream carrying channel input symbols during simulation.
pub const STREAM_INPUT: u64 = 1;
/// Stream carrying channel/process output draws during simulation.
pub const STREAM_OUTPUT: u64 = 2;
/// Shared uniforms used by the joint (coupled) draws of paired chains.
pub const STREAM_COUPLING_SHARED: u64 = 3;
/// Independent continuation draws for the first chain of a coupled pair.
pub const STREAM_COUPLING_LEFT: u64 = 4;
/// Independent continuation draws for the second chain of a coupled pair.
pub const STREAM_COUPLING_RIGHT: u64 = 5;
/// Auxiliary stream for experiment-level choices (restarts, probes).
pub const STREAM_EXPERIMENT: u64 = 6;

/// A seeded ChaCha8 stream.  `seed` selects the master key, `stream` one of
/// the independent substreams above (or any caller-chosen id).
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw one uniform variate in `[0, 1)`.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>()
}

/// Sample an index from a probability vector by inverse CDF on `u`.
///
/// The walk accumulates entries left to right and returns the first index
/// whose cumulative sum exceeds `u`; any rounding shortfall at the end falls
/// to the last index, so the function is total for `u` in `[0, 1)`.
pub fn sample_index(dist: &[f64], u: f64) -> u8 {
    debug_assert!(!dist.is_empty());
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    (dist.len() - 1) as u8
}

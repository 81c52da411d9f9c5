//! Trace generation and count statistics.
//!
//! [`simulate`] drives a channel forward from an explicit finite past:
//! inputs are drawn i.i.d. from the input law on one RNG stream, outputs
//! from the state-conditional kernels on a second, so input sequences are
//! reproducible independently of the channel parameters.  The finite `past`
//! stands in for the semi-infinite conditioning history: every result about
//! these processes holds for all pasts, so any concrete suffix of length at
//! least `kappa(T)` is a valid instantiation.
//!
//! [`count`] accumulates the depth-`k` window statistics an estimator
//! consumes: for every window `w` over `A^k` and input `a`, the number of
//! positions whose preceding `k` outputs spell `w` and whose input is `a`,
//! refined by the emitted output `b`.  Windows for the first positions draw
//! on the past, so a trace with `|past| >= k` yields exactly `n` counted
//! positions.

use crate::channel::{ChannelError, ChannelModel};
use crate::model::ModelError;
use crate::rng::{self, STREAM_INPUT, STREAM_OUTPUT};
use crate::strings::{Alphabet, ContextString};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cap on `|A|^k` when materializing dense count tables.
pub const MAX_COUNT_WINDOWS: u128 = 1 << 26;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("past of length {got} too short (need at least {need})")]
    PastTooShort { got: usize, need: usize },
    #[error("count depth {0} enumerates too many windows")]
    DepthTooLarge(usize),
}

/// A simulated (or imported) input/output trace with its conditioning past.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub alphabet: usize,
    pub x: Vec<u8>,
    pub y: Vec<u8>,
    pub past: ContextString,
    pub seed: u64,
}

impl Trace {
    /// Wrap existing sequences (e.g. parsed from CSV) as a trace.
    pub fn from_parts(alphabet: Alphabet, x: Vec<u8>, y: Vec<u8>, past: ContextString) -> Trace {
        assert_eq!(x.len(), y.len(), "inputs and outputs must align");
        Trace {
            alphabet: alphabet.size(),
            x,
            y,
            past,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Generate `n` steps of the channel from `past`, deterministically in
/// `seed`.  Inputs and outputs use separate RNG streams.
pub fn simulate(
    ch: &ChannelModel,
    n: usize,
    past: &ContextString,
    seed: u64,
) -> Result<Trace, SimulatorError> {
    let kappa = ch.depth();
    if past.len() < kappa {
        return Err(SimulatorError::PastTooShort {
            got: past.len(),
            need: kappa,
        });
    }
    let chain = ch.output_process()?.complete_chain()?;
    let mut window = past.suffix(kappa).index(ch.alphabet());
    let p = ch.input_law();
    let mut rng_in = rng::stream(seed, STREAM_INPUT);
    let mut rng_out = rng::stream(seed, STREAM_OUTPUT);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng::sample_index(p, rng::uniform(&mut rng_in));
        let theta = &ch.theta(chain.leaf_of(window))[a as usize];
        let b = rng::sample_index(theta, rng::uniform(&mut rng_out));
        x.push(a);
        y.push(b);
        window = chain.step(window, b);
    }
    Ok(Trace {
        alphabet: ch.alphabet().size(),
        x,
        y,
        past: past.clone(),
        seed,
    })
}

/// Dense per-window count statistics at depth `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub k: usize,
    pub alphabet: usize,
    /// `joint[(w * |A| + a) * |A| + b] = N_w(b, a)`.
    joint: Vec<u64>,
    /// Trace length `n = sum_w N_w`.
    pub n: u64,
}

impl SampleCounts {
    /// Assemble counts directly (synthetic or imported from elsewhere);
    /// `joint` is laid out as `[(w * |A| + a) * |A| + b]`.
    pub fn from_joint(k: usize, alphabet: Alphabet, joint: Vec<u64>) -> SampleCounts {
        let arity = alphabet.size();
        let windows = arity.checked_pow(k as u32).expect("window count overflow");
        assert_eq!(joint.len(), windows * arity * arity, "count table size");
        let n = joint.iter().sum();
        SampleCounts {
            k,
            alphabet: arity,
            joint,
            n,
        }
    }

    pub fn num_windows(&self) -> usize {
        let arity = self.alphabet;
        self.joint.len() / (arity * arity)
    }

    /// `N_w(b, a)`: positions with window `w`, input `a`, output `b`.
    pub fn n_w_b_a(&self, w: usize, b: u8, a: u8) -> u64 {
        self.joint[(w * self.alphabet + a as usize) * self.alphabet + b as usize]
    }

    /// `N_w(a) = sum_b N_w(b, a)`.
    pub fn n_w_a(&self, w: usize, a: u8) -> u64 {
        let base = (w * self.alphabet + a as usize) * self.alphabet;
        self.joint[base..base + self.alphabet].iter().sum()
    }

    /// `N_w = sum_a N_w(a)`.
    pub fn n_w(&self, w: usize) -> u64 {
        (0..self.alphabet as u8).map(|a| self.n_w_a(w, a)).sum()
    }

    /// `N_w(b) = sum_a N_w(b, a)`: output counts ignoring the input.
    pub fn n_w_b(&self, w: usize, b: u8) -> u64 {
        (0..self.alphabet as u8).map(|a| self.n_w_b_a(w, b, a)).sum()
    }
}

/// Count window/input/output occurrences of a trace at depth `k`.  Windows
/// for the first `k` positions extend into the past, so every position is
/// counted and `sum_w N_w = n`.
pub fn count(trace: &Trace, k: usize) -> Result<SampleCounts, SimulatorError> {
    if trace.past.len() < k {
        return Err(SimulatorError::PastTooShort {
            got: trace.past.len(),
            need: k,
        });
    }
    let alphabet = Alphabet::new(trace.alphabet)
        .map_err(|e| ModelError::from(crate::tree::TreeError::from(e)))?;
    let arity = alphabet.size();
    let n_windows = alphabet
        .pow_checked(k as u32)
        .filter(|&n| n <= MAX_COUNT_WINDOWS)
        .ok_or(SimulatorError::DepthTooLarge(k))? as usize;
    let mut joint = vec![0u64; n_windows * arity * arity];
    let mut window = trace.past.suffix(k).index(alphabet);
    for (&a, &b) in trace.x.iter().zip(&trace.y) {
        joint[(window * arity + a as usize) * arity + b as usize] += 1;
        window = (window * arity + b as usize) % n_windows;
    }
    Ok(SampleCounts {
        k,
        alphabet: arity,
        joint,
        n: trace.len() as u64,
    })
}

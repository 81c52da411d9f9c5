//! Maximal couplings of the good-state restriction chain.
//!
//! The concentration bound for state-occupancy counts rests on a thought
//! experiment: run two copies of the output process, each observed only
//! when its depth-`k` context lands in the good set, and couple their
//! randomness so they agree as often as the overlap of their laws allows.
//! This module makes the experiment executable:
//!
//! * [`maximal_step`] — one jointly-drawn symbol pair from two next-symbol
//!   laws, matching with the largest possible probability
//!   `C(A) = sum_b min(q_u(b), q_v(b))`, with the mass of symbols that keep
//!   both chains inside the good set stacked first;
//! * [`RestrictionChain`] — the output process watched at good-context
//!   hits, with bounded-window state (exact for complete-tree models whose
//!   depth fits the window) and an excursion cap so absorbing-like bad
//!   regions surface as errors instead of hangs;
//! * [`CoupledPair`] / [`coupled_run`] — the full coupling: shared-variate
//!   maximal steps while the emitted symbols agree, independent
//!   continuations after a mismatch, coalescence bookkeeping (agreement of
//!   the last `ell` symbols, not full equality) and post-coalescence
//!   divergence counts;
//! * [`martingale_experiment`] — conditional Monte Carlo estimates of the
//!   count martingale `V_m = E[N_w | Z_0..Z_m]`, whose increments the block
//!   constant from the estimator module is supposed to dominate.
//!
//! Everything is deterministic given a seed: the shared variates and the
//! two continuation streams are separate, fixed RNG streams.

use crate::estimator::{EstimatorError, GoodSet};
use crate::model::{ContextTreeModel, ModelError};
use crate::rng;
use crate::strings::ContextString;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CouplingError {
    #[error("bad excursion exceeded {cap} steps without reaching the good set")]
    ExcursionCap { cap: u64 },
    #[error("start history of length {got} too short (need at least {need})")]
    ShortStart { got: usize, need: usize },
    #[error("window of length {got} cannot hold contexts of depth {need}")]
    WindowTooShort { got: usize, need: usize },
    #[error("coupled chains disagree: {0}")]
    MismatchedPair(String),
    #[error("target state {0} is not in the good set")]
    TargetNotGood(ContextString),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Bad excursions longer than this abort the run; slow mixing makes
/// absorption-like behavior expected, so hitting the cap is reported rather
/// than retried.
pub const DEFAULT_EXCURSION_CAP: u64 = 10_000_000;

/// History window length that makes bounded-memory evolution exact and
/// leaves room for coalescence detection: the model depth, the good-set
/// depth and the agreement depth all fit, plus slack.
pub fn window_length(kappa: usize, k_n: usize, ell_n: usize) -> usize {
    kappa.max(k_n).max(ell_n) + 8
}

// ---------------------------------------------------------------------------
// Maximal symbol step
// ---------------------------------------------------------------------------

/// Draw one symbol for each of two chains from a single uniform variate
/// `u`, matching with probability exactly `C(A) = sum_b min(q_u(b),
/// q_v(b))`.
///
/// The unit interval is packed with the overlap masses `min(q_u(b),
/// q_v(b))` — symbols in `g_u ∩ g_v` first (ascending), then the rest — so
/// a low draw yields the same symbol for both chains, preferring symbols
/// that keep both inside the good set.  Above `C(A)` the two residual laws
/// `(q_u - q_v)^+` and `(q_v - q_u)^+` are stacked independently; each
/// marginal remains exactly its own law.
pub fn maximal_step(q_u: &[f64], q_v: &[f64], g_u: &[u8], g_v: &[u8], u: f64) -> (u8, u8) {
    debug_assert_eq!(q_u.len(), q_v.len());
    debug_assert!((0.0..1.0).contains(&u));
    let arity = q_u.len();
    let shared = |b: usize| g_u.contains(&(b as u8)) && g_v.contains(&(b as u8));
    let mut cum = 0.0;
    for b in (0..arity).filter(|&b| shared(b)).chain((0..arity).filter(|&b| !shared(b))) {
        cum += q_u[b].min(q_v[b]);
        if u < cum {
            return (b as u8, b as u8);
        }
    }
    // Residual region: locate u - C(A) in each chain's surplus stacking.
    let residual = u - cum;
    let pick = |own: &[f64], other: &[f64]| -> u8 {
        let mut acc = 0.0;
        let mut last = None;
        for b in 0..arity {
            let surplus = (own[b] - other[b]).max(0.0);
            if surplus > 0.0 {
                last = Some(b as u8);
                acc += surplus;
                if residual < acc {
                    return b as u8;
                }
            }
        }
        // Rounding pushed u past the accumulated mass; the final surplus
        // interval (or, when the laws are identical, the heaviest symbol)
        // absorbs it.
        last.unwrap_or_else(|| {
            own.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(b, _)| b as u8)
                .unwrap()
        })
    };
    (pick(q_u, q_v), pick(q_v, q_u))
}

// ---------------------------------------------------------------------------
// Restriction chain
// ---------------------------------------------------------------------------

/// Outcome of running to the next good-context hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Excursion {
    /// Window index of the new good context.
    pub state: usize,
    /// Symbols emitted to reach it (at least one).
    pub symbols: u64,
}

/// The output process equipped with a good set: a bounded history window
/// evolves symbol by symbol, and [`RestrictionChain::advance`] exposes the
/// embedded chain of good-context hits.
#[derive(Debug, Clone)]
pub struct RestrictionChain<'a> {
    model: &'a ContextTreeModel,
    good: &'a GoodSet,
    window: Vec<u8>,
    cap: u64,
}

impl<'a> RestrictionChain<'a> {
    /// Start from the trailing `window_len` symbols of `start`.
    pub fn new(
        model: &'a ContextTreeModel,
        good: &'a GoodSet,
        start: &ContextString,
        window_len: usize,
        cap: u64,
    ) -> Result<Self, CouplingError> {
        let need = model.depth().max(good.depth());
        if window_len < need {
            return Err(CouplingError::WindowTooShort {
                got: window_len,
                need,
            });
        }
        if start.len() < window_len {
            return Err(CouplingError::ShortStart {
                got: start.len(),
                need: window_len,
            });
        }
        Ok(RestrictionChain {
            model,
            good,
            window: start.suffix(window_len).symbols().to_vec(),
            cap,
        })
    }

    /// Resume from a raw window captured earlier (e.g. for conditional
    /// continuations of a recorded trajectory).
    pub fn resume(
        model: &'a ContextTreeModel,
        good: &'a GoodSet,
        window: Vec<u8>,
        cap: u64,
    ) -> Result<Self, CouplingError> {
        let need = model.depth().max(good.depth());
        if window.len() < need {
            return Err(CouplingError::WindowTooShort {
                got: window.len(),
                need,
            });
        }
        Ok(RestrictionChain {
            model,
            good,
            window,
            cap,
        })
    }

    pub fn good(&self) -> &GoodSet {
        self.good
    }

    /// The current truncated history, oldest first.
    pub fn window(&self) -> &[u8] {
        &self.window
    }

    /// Window index of the current depth-`k` context.
    pub fn context(&self) -> usize {
        self.good.window_of(&self.window)
    }

    pub fn is_good(&self) -> bool {
        self.good.contains(self.context())
    }

    /// The model's next-symbol law at the current history.
    pub fn law(&self) -> &[f64] {
        self.model
            .q_given(&self.window)
            .expect("window length covers the model depth")
    }

    fn push(&mut self, b: u8) {
        self.window.remove(0);
        self.window.push(b);
    }

    /// Emit one symbol using the uniform variate `u`.
    pub fn step_with(&mut self, u: f64) -> u8 {
        let b = rng::sample_index(self.law(), u);
        self.push(b);
        b
    }

    /// Run until the next good-context hit and return it together with the
    /// excursion length.
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<Excursion, CouplingError> {
        let mut symbols = 0u64;
        loop {
            self.step_with(rng::uniform(rng));
            symbols += 1;
            if self.is_good() {
                return Ok(Excursion {
                    state: self.context(),
                    symbols,
                });
            }
            if symbols >= self.cap {
                return Err(CouplingError::ExcursionCap { cap: self.cap });
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Coupled pair
// ---------------------------------------------------------------------------

/// One restriction step of a coupled pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    /// The single-symbol matched jump: first symbols equal and both chains
    /// immediately in good contexts.
    pub matched: bool,
    /// Every emitted symbol pair agreed and the chains moved in lockstep.
    pub synchronized: bool,
    pub left_symbols: u64,
    pub right_symbols: u64,
    /// Symbols each chain emitted this step, in order.
    pub left_emitted: Vec<u8>,
    pub right_emitted: Vec<u8>,
    /// Length of the longest common suffix of the two windows afterwards.
    pub agree_depth: usize,
    /// Whether the depth-`k` contexts agree afterwards.
    pub agree_k: bool,
}

/// When the chains first agreed on their last `ell` symbols, and how often
/// they fell back out of agreement afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoalescenceRecord {
    /// Agreement depth defining coalescence.
    pub ell: usize,
    /// First step index with agreement depth ≥ `ell` (0 when the start
    /// states already agree); `None` if never within the horizon.
    pub tau: Option<usize>,
    /// Steps after `tau` whose agreement depth fell below `ell`.
    pub divergences_after: u64,
}

/// Result of [`coupled_run`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoupledRun {
    pub coalescence: CoalescenceRecord,
    pub records: Vec<StepRecord>,
}

/// Two restriction chains driven by a shared variate stream while their
/// symbols agree, and by separate continuation streams once they differ
/// within a step.
#[derive(Debug)]
pub struct CoupledPair<'a> {
    left: RestrictionChain<'a>,
    right: RestrictionChain<'a>,
    /// Coalescence agreement depth.
    ell: usize,
    shared: ChaCha8Rng,
    left_rng: ChaCha8Rng,
    right_rng: ChaCha8Rng,
}

impl<'a> CoupledPair<'a> {
    pub fn new(
        left: RestrictionChain<'a>,
        right: RestrictionChain<'a>,
        ell: usize,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        if left.good != right.good {
            return Err(CouplingError::MismatchedPair(
                "good sets differ".to_string(),
            ));
        }
        if left.window.len() != right.window.len() {
            return Err(CouplingError::MismatchedPair(format!(
                "window lengths {} vs {}",
                left.window.len(),
                right.window.len()
            )));
        }
        if ell > left.window.len() {
            return Err(CouplingError::WindowTooShort {
                got: left.window.len(),
                need: ell,
            });
        }
        Ok(CoupledPair {
            left,
            right,
            ell,
            shared: rng::stream(seed, rng::STREAM_COUPLING_SHARED),
            left_rng: rng::stream(seed, rng::STREAM_COUPLING_LEFT),
            right_rng: rng::stream(seed, rng::STREAM_COUPLING_RIGHT),
        })
    }

    pub fn left(&self) -> &RestrictionChain<'a> {
        &self.left
    }

    pub fn right(&self) -> &RestrictionChain<'a> {
        &self.right
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Longest common suffix length of the two windows.
    pub fn agreement_depth(&self) -> usize {
        agreement(&self.left.window, &self.right.window)
    }

    /// Advance both chains to their next good contexts under the coupling:
    /// shared-variate maximal steps while every emitted pair has agreed;
    /// once a pair differs, or one chain has already stopped, the remaining
    /// moves draw from the per-chain continuation streams.
    pub fn coupled_step(&mut self) -> Result<StepRecord, CouplingError> {
        let cap = self.left.cap.min(self.right.cap);
        let mut left_done = false;
        let mut right_done = false;
        let mut synchronized = true;
        let mut first = true;
        let mut matched = false;
        let mut left_emitted = Vec::new();
        let mut right_emitted = Vec::new();
        while !(left_done && right_done) {
            if !left_done && !right_done && synchronized {
                let u = rng::uniform(&mut self.shared);
                let q_u = self.left.law().to_vec();
                let q_v = self.right.law().to_vec();
                let g_u = self.left.good.exit_set(self.left.context());
                let g_v = self.right.good.exit_set(self.right.context());
                let (b1, b2) = maximal_step(&q_u, &q_v, &g_u, &g_v, u);
                self.left.push(b1);
                self.right.push(b2);
                left_emitted.push(b1);
                right_emitted.push(b2);
                if b1 != b2 {
                    synchronized = false;
                }
                left_done = self.left.is_good();
                right_done = self.right.is_good();
                if first {
                    matched = b1 == b2 && left_done && right_done;
                    first = false;
                }
            } else {
                if !left_done {
                    let u = rng::uniform(&mut self.left_rng);
                    left_emitted.push(self.left.step_with(u));
                    left_done = self.left.is_good();
                }
                if !right_done {
                    let u = rng::uniform(&mut self.right_rng);
                    right_emitted.push(self.right.step_with(u));
                    right_done = self.right.is_good();
                }
                synchronized = false;
            }
            if left_emitted.len() as u64 >= cap || right_emitted.len() as u64 >= cap {
                return Err(CouplingError::ExcursionCap { cap });
            }
        }
        let agree_depth = self.agreement_depth();
        Ok(StepRecord {
            matched,
            synchronized: synchronized && left_emitted.len() == right_emitted.len(),
            left_symbols: left_emitted.len() as u64,
            right_symbols: right_emitted.len() as u64,
            left_emitted,
            right_emitted,
            agree_depth,
            agree_k: agree_depth >= self.left.good.depth(),
        })
    }
}

fn agreement(a: &[u8], b: &[u8]) -> usize {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count()
}

/// Run `horizon` coupled restriction steps, recording each step and the
/// coalescence summary (first agreement to depth `ell`, divergences after).
pub fn coupled_run(pair: &mut CoupledPair, horizon: usize) -> Result<CoupledRun, CouplingError> {
    let mut records = Vec::with_capacity(horizon);
    let mut tau = (pair.agreement_depth() >= pair.ell).then_some(0);
    let mut divergences_after = 0u64;
    for m in 1..=horizon {
        let record = pair.coupled_step()?;
        let agreed = record.agree_depth >= pair.ell;
        match tau {
            Some(_) if !agreed => divergences_after += 1,
            None if agreed => tau = Some(m),
            _ => {}
        }
        records.push(record);
    }
    Ok(CoupledRun {
        coalescence: CoalescenceRecord {
            ell: pair.ell,
            tau,
            divergences_after,
        },
        records,
    })
}

// ---------------------------------------------------------------------------
// Count martingale experiment
// ---------------------------------------------------------------------------

/// Empirical behavior of the Doob martingale `V_m = E[N_w | Z_0..Z_m]` over
/// a restriction trajectory: its largest one-step move, its starting value,
/// and the stationary-ratio center it should start near.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// Restriction steps in the base trajectory.
    pub horizon: usize,
    /// Monte Carlo continuations per index.
    pub runs: usize,
    /// `max_m |V_m - V_{m-1}|`.
    pub max_difference: f64,
    /// `V_0 = E[N_w | Z_0]`.
    pub v0: f64,
    /// `horizon * mu(w) / mu(G)`.
    pub center: f64,
    /// `V_horizon = N_w` on the base trajectory.
    pub final_count: u64,
}

/// Estimate the count martingale of a target good state `w` by conditional
/// Monte Carlo: one base trajectory of `horizon` restriction steps, then
/// `runs` independent continuations from every prefix.  Deterministic in
/// `seed`.
pub fn martingale_experiment(
    model: &ContextTreeModel,
    good: &GoodSet,
    w: &ContextString,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<MartingaleReport, CouplingError> {
    let alphabet = model.alphabet();
    let target = w.index(alphabet);
    if !good.contains(target) || w.len() != good.depth() {
        return Err(CouplingError::TargetNotGood(w.clone()));
    }
    let len = window_length(model.depth(), good.depth(), 0);
    let start = tile(w, len);
    let mut base = RestrictionChain::new(model, good, &start, len, DEFAULT_EXCURSION_CAP)?;
    let mut base_rng = rng::stream(seed, rng::STREAM_EXPERIMENT);
    let mut windows: Vec<Vec<u8>> = Vec::with_capacity(horizon + 1);
    let mut hits: Vec<u64> = Vec::with_capacity(horizon + 1);
    windows.push(base.window().to_vec());
    hits.push(0);
    for m in 1..=horizon {
        let exc = base.advance(&mut base_rng)?;
        hits.push(hits[m - 1] + u64::from(exc.state == target));
        windows.push(base.window().to_vec());
    }

    let mut v = vec![0.0; horizon + 1];
    v[horizon] = hits[horizon] as f64;
    for m in 0..horizon {
        let mut acc = 0.0;
        for r in 0..runs {
            let mut chain = RestrictionChain::resume(
                model,
                good,
                windows[m].clone(),
                DEFAULT_EXCURSION_CAP,
            )?;
            let mut rr = rng::stream(mix(seed, m as u64, r as u64), rng::STREAM_EXPERIMENT);
            let mut future = 0u64;
            for _ in m + 1..=horizon {
                let exc = chain.advance(&mut rr)?;
                future += u64::from(exc.state == target);
            }
            acc += future as f64;
        }
        v[m] = hits[m] as f64 + acc / runs as f64;
    }

    let max_difference = (1..=horizon)
        .map(|m| (v[m] - v[m - 1]).abs())
        .fold(0.0, f64::max);
    let mu_w = model.string_stationary_prob(w)?;
    let mut mu_g = 0.0;
    for s in good.states() {
        mu_g += model.string_stationary_prob(&s)?;
    }
    Ok(MartingaleReport {
        horizon,
        runs,
        max_difference,
        v0: v[0],
        center: horizon as f64 * mu_w / mu_g,
        final_count: hits[horizon],
    })
}

/// Repeat `w` cyclically so the result ends with `w` and has length `len`.
fn tile(w: &ContextString, len: usize) -> ContextString {
    let src = w.symbols();
    let mut out = vec![0u8; len];
    for i in 0..len {
        // Work backwards from the end so the suffix is exactly `w`.
        out[len - 1 - i] = src[src.len() - 1 - (i % src.len())];
    }
    ContextString::from_raw(out)
}

fn mix(seed: u64, m: u64, r: u64) -> u64 {
    // Offset by one so no continuation seed collapses back onto `seed`
    // itself (which drives the base trajectory).
    seed ^ (m + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (r + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

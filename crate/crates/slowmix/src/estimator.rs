//! Estimation from channel samples under a declared dependency-decay budget.
//!
//! Without a mixing-time assumption a finite sample certifies only part of a
//! model.  This module implements the certifiable part:
//!
//! * [`naive_estimates`] — raw conditional frequencies `N_w(b,a) / N_w(a)`,
//!   with never-seen `(w, a)` pairs flagged as absent rather than invented;
//! * [`good_states`] — the windows whose counts clear the threshold
//!   `max{ n d_k log2(1/d_k), |A|^(k+1) log2^2 n }` (with `d_k` the decay
//!   tail at the window depth) for **every** input symbol, which is exactly
//!   where the naive estimates concentrate;
//! * [`l1_certificate`] — the uniform L1 deviation bound
//!   `2 sqrt(ln2/log2 n + ln2/log2(1/d_k))` those states enjoy, its
//!   confidence level, and a per-state refinement driven by actual counts;
//! * [`eta`] — the pairwise overlap `min_{u,v} sum_b min(q_u(b), q_v(b))`
//!   of output laws of good states, restricted to symbols that keep the
//!   process inside the good set.  This is the coupling rate that governs
//!   how fast two copies of the process forget which good state they
//!   started in;
//! * [`restriction_aperiodic`] — whether the process watched only at good
//!   windows is aperiodic, decided purely from the good set's geometry;
//! * [`b_constant`] and [`stationary_certificate`] — the martingale block
//!   constant and the resulting two-sided concentration bound on good-window
//!   counts `N_w` around `n_tilde * mu(w) / mu(G)`, together with its
//!   inversion [`certificate_threshold`];
//! * [`stationary_ratio_estimates`] — the count ratios `N_w / n_tilde` that
//!   estimate stationary probabilities *relative to the good set*, which
//!   converge long before absolute frequencies do on slow-mixing chains;
//! * [`estimate`] — everything above bundled into one report.
//!
//! Logs are base 2 throughout.

use crate::channel::InputLaw;
use crate::decay::{DecayError, DecayProfile};
use crate::simulator::SampleCounts;
use crate::strings::{Alphabet, ContextString, StringError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error(transparent)]
    String(#[from] StringError),
    #[error("no state cleared the good-state threshold")]
    EmptyGoodSet,
    #[error("zeta {zeta} below the admissible minimum {min}")]
    BadZeta { zeta: f64, min: f64 },
    #[error("counts taken at depth {got}, decay rule prescribes {want}")]
    DepthMismatch { got: usize, want: usize },
    #[error("decay tail {delta} at depth {k} reaches 1; certificate undefined")]
    DeltaTooLarge { k: usize, delta: f64 },
    #[error("coupling overlap {eta} outside (0, 1]")]
    EtaZero { eta: f64 },
    #[error("restriction to the good set is periodic")]
    NotAperiodic,
    #[error("no output distribution supplied for good state {0}")]
    MissingDistribution(ContextString),
    #[error("good-set description invalid: {0}")]
    BadGoodSet(String),
}

// ---------------------------------------------------------------------------
// Naive estimates
// ---------------------------------------------------------------------------

/// Raw conditional frequencies per window and input.  `theta(w, a)` is
/// `None` when input `a` was never observed alongside window `w`.  Entries
/// are the literal count ratios, so individual values like `2/3` are
/// bit-exact; rows sum to one up to a few units in the last place.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveEstimates {
    alphabet: Alphabet,
    k: usize,
    rows: Vec<Vec<Option<Vec<f64>>>>,
}

impl NaiveEstimates {
    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.k
    }

    pub fn num_windows(&self) -> usize {
        self.rows.len()
    }

    /// `theta_hat_w(.|a)`, if defined.
    pub fn theta(&self, w: usize, a: u8) -> Option<&[f64]> {
        self.rows[w][a as usize].as_deref()
    }

    /// All per-input rows of one window.
    pub fn window(&self, w: usize) -> &[Option<Vec<f64>>] {
        &self.rows[w]
    }

    /// Estimated output law `q_hat_w(b) = sum_a p_a theta_hat_w(b|a)`;
    /// `None` if any input with positive probability has no estimate.
    pub fn output_distribution(&self, w: usize, input: &InputLaw) -> Option<Vec<f64>> {
        let arity = self.alphabet.size();
        let mut q = vec![0.0; arity];
        for (a, &p_a) in input.iter().enumerate() {
            if p_a == 0.0 {
                continue;
            }
            let row = self.rows[w][a].as_ref()?;
            for (acc, value) in q.iter_mut().zip(row) {
                *acc += p_a * value;
            }
        }
        Some(q)
    }

    /// The estimates keyed by window string (for reports).
    pub fn by_context(&self) -> BTreeMap<ContextString, Vec<Option<Vec<f64>>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(w, rows)| {
                (
                    ContextString::decode(w, self.k, self.alphabet),
                    rows.clone(),
                )
            })
            .collect()
    }
}

/// Conditional frequencies `theta_hat_w(b|a) = N_w(b,a) / N_w(a)` for every
/// window of the count table.  Pairs `(w, a)` with `N_w(a) = 0` are left
/// absent.
pub fn naive_estimates(counts: &SampleCounts) -> NaiveEstimates {
    let alphabet = Alphabet::new(counts.alphabet).expect("counts carry a valid alphabet");
    let arity = alphabet.size();
    let rows = (0..counts.num_windows())
        .map(|w| {
            (0..arity as u8)
                .map(|a| {
                    let total = counts.n_w_a(w, a);
                    if total == 0 {
                        return None;
                    }
                    let row: Vec<f64> = (0..arity as u8)
                        .map(|b| counts.n_w_b_a(w, b, a) as f64 / total as f64)
                        .collect();
                    Some(row)
                })
                .collect()
        })
        .collect();
    NaiveEstimates {
        alphabet,
        k: counts.k,
        rows,
    }
}

// ---------------------------------------------------------------------------
// Good states
// ---------------------------------------------------------------------------

/// Which counting rule admitted the members of a [`GoodSet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoodRule {
    /// Count threshold `max{ n d_k log2(1/d_k), |A|^(k+1) log2^2 n }`.
    General,
    /// Count threshold `n^(zeta + log|A| / (log|A| - log gamma))` for
    /// geometric decay `gamma^i`.
    Exponential { gamma: f64, zeta: f64 },
}

/// The set of windows whose counts certify their estimates, along with the
/// per-state exit sets `G_w` (output symbols that shift `w` to another
/// member).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoodSetJson", into = "GoodSetJson")]
pub struct GoodSet {
    alphabet: Alphabet,
    k: usize,
    threshold: f64,
    rule: GoodRule,
    /// Sorted window indices of the members.
    members: Vec<usize>,
    /// `g_sets[i]` lists the symbols keeping `members[i]` inside the set.
    g_sets: Vec<Vec<u8>>,
}

impl GoodSet {
    fn new(
        alphabet: Alphabet,
        k: usize,
        threshold: f64,
        rule: GoodRule,
        members: Vec<usize>,
    ) -> GoodSet {
        let g_sets = members
            .iter()
            .map(|&w| {
                alphabet
                    .symbols()
                    .filter(|&b| members.binary_search(&shift(w, b, alphabet, k)).is_ok())
                    .collect()
            })
            .collect();
        GoodSet {
            alphabet,
            k,
            threshold,
            rule,
            members,
            g_sets,
        }
    }

    /// A set declared by explicit membership (threshold zero), for running
    /// couplings and restrictions against a chosen collection of states.
    pub fn from_states(
        alphabet: Alphabet,
        k: usize,
        states: &[ContextString],
    ) -> Result<GoodSet, EstimatorError> {
        let mut members = Vec::with_capacity(states.len());
        for s in states {
            if s.len() != k {
                return Err(EstimatorError::BadGoodSet(format!(
                    "state {s} has length {}, want {k}",
                    s.len()
                )));
            }
            members.push(s.index(alphabet));
        }
        members.sort_unstable();
        members.dedup();
        Ok(GoodSet::new(alphabet, k, 0.0, GoodRule::General, members))
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.k
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rule(&self) -> GoodRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member window indices, ascending.
    pub fn windows(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, w: usize) -> bool {
        self.members.binary_search(&w).is_ok()
    }

    /// Members as context strings, in window order.
    pub fn states(&self) -> Vec<ContextString> {
        self.members
            .iter()
            .map(|&w| ContextString::decode(w, self.k, self.alphabet))
            .collect()
    }

    /// `G_w`: the symbols whose one-step shift keeps `w` in the set.
    pub fn g_set(&self, w: usize) -> Option<&[u8]> {
        self.members
            .binary_search(&w)
            .ok()
            .map(|i| self.g_sets[i].as_slice())
    }

    /// The symbols shifting an arbitrary window `w` (member or not) into
    /// the set; agrees with [`GoodSet::g_set`] on members.
    pub fn exit_set(&self, w: usize) -> Vec<u8> {
        self.alphabet
            .symbols()
            .filter(|&b| self.contains(shift(w, b, self.alphabet, self.k)))
            .collect()
    }

    /// Window index of the depth-`k` suffix of `history` (which must be at
    /// least `k` long).
    pub fn window_of(&self, history: &[u8]) -> usize {
        debug_assert!(history.len() >= self.k);
        history[history.len() - self.k..]
            .iter()
            .fold(0usize, |acc, &b| acc * self.alphabet.size() + b as usize)
    }
}

/// JSON face of a good set: members as strings; exit sets are derived, so
/// they are emitted for readability but recomputed (and checked) on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GoodSetJson {
    alphabet: usize,
    depth: usize,
    threshold: f64,
    rule: GoodRule,
    states: Vec<String>,
    #[serde(default)]
    g_sets: BTreeMap<String, Vec<u8>>,
}

impl From<GoodSet> for GoodSetJson {
    fn from(set: GoodSet) -> GoodSetJson {
        let states: Vec<String> = set.states().iter().map(|s| s.to_string()).collect();
        let g_sets = states
            .iter()
            .zip(&set.g_sets)
            .map(|(s, g)| (s.clone(), g.clone()))
            .collect();
        GoodSetJson {
            alphabet: set.alphabet.size(),
            depth: set.k,
            threshold: set.threshold,
            rule: set.rule,
            states,
            g_sets,
        }
    }
}

impl TryFrom<GoodSetJson> for GoodSet {
    type Error = EstimatorError;

    fn try_from(json: GoodSetJson) -> Result<GoodSet, EstimatorError> {
        let alphabet = Alphabet::new(json.alphabet)?;
        if !json.threshold.is_finite() || json.threshold < 0.0 {
            return Err(EstimatorError::BadGoodSet(format!(
                "threshold {} not a finite nonnegative number",
                json.threshold
            )));
        }
        let mut members = Vec::with_capacity(json.states.len());
        for state in &json.states {
            let parsed: ContextString = state
                .parse()
                .map_err(|e: StringError| EstimatorError::BadGoodSet(e.to_string()))?;
            let parsed = ContextString::new(parsed.symbols().to_vec(), alphabet)?;
            if parsed.len() != json.depth {
                return Err(EstimatorError::BadGoodSet(format!(
                    "state {state} is not {} symbols deep",
                    json.depth
                )));
            }
            members.push(parsed.index(alphabet));
        }
        members.sort_unstable();
        members.dedup();
        if members.len() != json.states.len() {
            return Err(EstimatorError::BadGoodSet("duplicate states".into()));
        }
        let set = GoodSet::new(alphabet, json.depth, json.threshold, json.rule, members);
        if !json.g_sets.is_empty() {
            let derived: BTreeMap<String, Vec<u8>> = GoodSetJson::from(set.clone()).g_sets;
            if derived != json.g_sets {
                return Err(EstimatorError::BadGoodSet(
                    "supplied exit sets disagree with the member list".into(),
                ));
            }
        }
        Ok(set)
    }
}

/// One-step window shift: append `b`, drop the oldest symbol.
fn shift(w: usize, b: u8, alphabet: Alphabet, k: usize) -> usize {
    let windows = alphabet.size().pow(k as u32);
    (w * alphabet.size() + b as usize) % windows
}

/// The general count threshold `max{ n d_k log2(1/d_k), |A|^(k+1) log2^2 n }`
/// with `d_k` the decay tail at depth `k` (`d_k log2(1/d_k)` is continued by
/// its limit `0` at `d_k = 0`).
pub fn general_threshold(
    alphabet: Alphabet,
    n: u64,
    k: usize,
    d: &DecayProfile,
) -> Result<f64, EstimatorError> {
    let delta = d.delta(k.max(1) as u64)?;
    let slow_term = if delta > 0.0 {
        n as f64 * delta * (1.0 / delta).log2()
    } else {
        0.0
    };
    let log_n = (n as f64).log2();
    let fast_term = (alphabet.size() as f64).powi(k as i32 + 1) * log_n * log_n;
    Ok(slow_term.max(fast_term))
}

/// Windows whose count clears [`general_threshold`] for every input symbol.
/// An empty result is a valid (if useless) outcome.
pub fn good_states(counts: &SampleCounts, d: &DecayProfile) -> Result<GoodSet, EstimatorError> {
    let alphabet = Alphabet::new(counts.alphabet).expect("counts carry a valid alphabet");
    let threshold = general_threshold(alphabet, counts.n, counts.k, d)?;
    let members = collect_members(counts, alphabet, threshold);
    Ok(GoodSet::new(
        alphabet,
        counts.k,
        threshold,
        GoodRule::General,
        members,
    ))
}

fn collect_members(counts: &SampleCounts, alphabet: Alphabet, threshold: f64) -> Vec<usize> {
    (0..counts.num_windows())
        .filter(|&w| {
            alphabet
                .symbols()
                .all(|a| counts.n_w_a(w, a) as f64 >= threshold)
        })
        .collect()
}

/// The window depth the geometric-decay rule prescribes for a sample of
/// length `n`: `floor(log2 n / (log2 |A| - log2 gamma))`.
pub fn exponential_depth(alphabet: Alphabet, n: u64, gamma: f64) -> usize {
    let denom = (alphabet.size() as f64).log2() - gamma.log2();
    ((n as f64).log2() / denom).floor().max(0.0) as usize
}

/// The geometric-decay count threshold
/// `n^(zeta + log2 |A| / (log2 |A| - log2 gamma))`.
pub fn exponential_threshold(
    alphabet: Alphabet,
    n: u64,
    gamma: f64,
    zeta: f64,
) -> Result<f64, EstimatorError> {
    DecayProfile::exponential(gamma)?;
    let log_a = (alphabet.size() as f64).log2();
    let denom = log_a - gamma.log2();
    let min_zeta = -gamma.log2() / denom;
    if zeta < min_zeta {
        return Err(EstimatorError::BadZeta {
            zeta,
            min: min_zeta,
        });
    }
    Ok((n as f64).powf(zeta + log_a / denom))
}

/// Good states under the geometric-decay rule `d(i) = gamma^i`.  The counts
/// must be taken at the depth [`exponential_depth`] prescribes.
///
/// With `zeta` at its admissible minimum the threshold already equals `n`,
/// so on genuine samples (where window counts sum to `n` across inputs) the
/// result is empty; the rule is retained for its role in the deviation
/// bound, not as a practical state selector.
pub fn good_states_exponential(
    counts: &SampleCounts,
    gamma: f64,
    zeta: f64,
) -> Result<GoodSet, EstimatorError> {
    let alphabet = Alphabet::new(counts.alphabet).expect("counts carry a valid alphabet");
    let threshold = exponential_threshold(alphabet, counts.n, gamma, zeta)?;
    let want = exponential_depth(alphabet, counts.n, gamma);
    if counts.k != want {
        return Err(EstimatorError::DepthMismatch { got: counts.k, want });
    }
    let members = collect_members(counts, alphabet, threshold);
    Ok(GoodSet::new(
        alphabet,
        counts.k,
        threshold,
        GoodRule::Exponential { gamma, zeta },
        members,
    ))
}

/// The largest window depth at which the fast term of the good-state
/// threshold still leaves room for good states (`|A|^(k+1) log2^2 n <=
/// n/4`); `0` if even depth zero fails.
pub fn default_depth(alphabet: Alphabet, n: u64) -> usize {
    let log_n = (n as f64).log2();
    let budget = n as f64 / 4.0;
    let mut k = 0usize;
    while (alphabet.size() as f64).powi(k as i32 + 2) * log_n * log_n <= budget {
        k += 1;
    }
    k
}

// ---------------------------------------------------------------------------
// L1 deviation certificates
// ---------------------------------------------------------------------------

/// A uniform L1 deviation bound for naive estimates at good states, with its
/// confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Certificate {
    pub n: u64,
    pub k: usize,
    pub alphabet: usize,
    /// Decay tail at depth `k` the bound was computed with.
    pub delta_k: f64,
    /// Uniform bound on `|theta_tilde_w(.|a) - theta_hat_w(.|a)|_1` over
    /// good states.
    pub bound: f64,
    /// `1 - 2^(-|A|^(k+1) log2 n)`; saturates to `1.0` quickly.
    pub confidence: f64,
    /// Base-2 log of the confidence shortfall, kept separately because the
    /// shortfall itself underflows.
    pub tail_log2: f64,
}

impl L1Certificate {
    /// Count-driven refinement
    /// `sqrt(ln2 (|A|^(k+1) log2 n + n delta_k) / N_w(a))` of the uniform
    /// bound for one `(w, a)` cell.
    pub fn refined(&self, count: u64) -> f64 {
        let log_n = (self.n as f64).log2();
        let mass = (self.alphabet as f64).powi(self.k as i32 + 1) * log_n
            + self.n as f64 * self.delta_k;
        (std::f64::consts::LN_2 * mass / count as f64).sqrt()
    }
}

fn certificate_confidence(alphabet: Alphabet, n: u64, k: usize) -> (f64, f64) {
    let tail_log2 = -(alphabet.size() as f64).powi(k as i32 + 1) * (n as f64).log2();
    (1.0 - tail_log2.exp2(), tail_log2)
}

/// The deviation bound `2 sqrt(ln2/log2 n + ln2/log2(1/delta_k))` enjoyed by
/// every good state at depth `k`, at confidence
/// `1 - 2^(-|A|^(k+1) log2 n)`.
pub fn l1_certificate(
    alphabet: Alphabet,
    n: u64,
    k: usize,
    d: &DecayProfile,
) -> Result<L1Certificate, EstimatorError> {
    let delta_k = d.delta(k.max(1) as u64)?;
    if delta_k >= 1.0 {
        return Err(EstimatorError::DeltaTooLarge { k, delta: delta_k });
    }
    let ln2 = std::f64::consts::LN_2;
    let slow = if delta_k > 0.0 {
        ln2 / (1.0 / delta_k).log2()
    } else {
        0.0
    };
    let bound = 2.0 * (ln2 / (n as f64).log2() + slow).sqrt();
    let (confidence, tail_log2) = certificate_confidence(alphabet, n, k);
    Ok(L1Certificate {
        n,
        k,
        alphabet: alphabet.size(),
        delta_k,
        bound,
        confidence,
        tail_log2,
    })
}

/// The sharper geometric-decay deviation bound
/// `2 sqrt(ln2 ((1-gamma)|A| log2 n + 1) / ((1-gamma) n^zeta))`, at the
/// depth and confidence of the geometric rule.
pub fn l1_certificate_exponential(
    alphabet: Alphabet,
    n: u64,
    gamma: f64,
    zeta: f64,
) -> Result<L1Certificate, EstimatorError> {
    exponential_threshold(alphabet, n, gamma, zeta)?;
    let k = exponential_depth(alphabet, n, gamma);
    let delta_k = DecayProfile::exponential(gamma)?.delta(k.max(1) as u64)?;
    let ln2 = std::f64::consts::LN_2;
    let bound = 2.0
        * (ln2 * ((1.0 - gamma) * alphabet.size() as f64 * (n as f64).log2() + 1.0)
            / ((1.0 - gamma) * (n as f64).powf(zeta)))
        .sqrt();
    let (confidence, tail_log2) = certificate_confidence(alphabet, n, k);
    Ok(L1Certificate {
        n,
        k,
        alphabet: alphabet.size(),
        delta_k,
        bound,
        confidence,
        tail_log2,
    })
}

// ---------------------------------------------------------------------------
// Coupling overlap
// ---------------------------------------------------------------------------

/// The pairwise overlap `min_{u,v in G} sum_{b in G_u ∩ G_v} min(q_u(b),
/// q_v(b))` of output laws over the good set, using only symbols that keep
/// both states inside the set.  `q` may hold exact aggregated laws or
/// sample estimates.
pub fn eta(
    q: &BTreeMap<ContextString, Vec<f64>>,
    good: &GoodSet,
) -> Result<f64, EstimatorError> {
    if good.is_empty() {
        return Err(EstimatorError::EmptyGoodSet);
    }
    let states = good.states();
    let laws: Vec<&Vec<f64>> = states
        .iter()
        .map(|s| {
            q.get(s)
                .ok_or_else(|| EstimatorError::MissingDistribution(s.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut best = f64::INFINITY;
    for (i, &w_i) in good.windows().iter().enumerate() {
        for (j, &w_j) in good.windows().iter().enumerate() {
            let g_i = good.g_set(w_i).unwrap();
            let g_j = good.g_set(w_j).unwrap();
            let overlap: f64 = g_i
                .iter()
                .filter(|b| g_j.contains(b))
                .map(|&b| laws[i][b as usize].min(laws[j][b as usize]))
                .sum();
            best = best.min(overlap);
        }
    }
    Ok(best)
}

/// Deflate a sample-estimated overlap by the worst case the L1 certificate
/// allows: each state's output law is a mixture of per-input rows, so it
/// inherits at most the full per-input deviation, and a pair of states can
/// lose twice that.
pub fn eta_conservative(eta_raw: f64, l1_bound: f64) -> f64 {
    (eta_raw - 2.0 * l1_bound).max(0.0)
}

// ---------------------------------------------------------------------------
// Periodicity of the restriction
// ---------------------------------------------------------------------------

/// Whether the process observed only at good windows is aperiodic.
///
/// The chain watched at good windows jumps along the depth-`k` shift graph
/// from one member to the first member hit next; since every one-step shift
/// has positive probability, the support of those jumps is exactly
/// "reachable with all intermediate windows outside the set".  The jump
/// graph is strongly connected (the full shift graph is), so the chain is
/// aperiodic iff the gcd of its cycle lengths is one, which a BFS level
/// labelling decides.
pub fn restriction_aperiodic(good: &GoodSet) -> Result<bool, EstimatorError> {
    if good.is_empty() {
        return Err(EstimatorError::EmptyGoodSet);
    }
    let edges = restriction_support(good);
    let index_of: BTreeMap<usize, usize> = good
        .windows()
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, i))
        .collect();

    // BFS levels from the first member; for a strongly connected digraph the
    // period is the gcd of level(u) + 1 - level(v) over all edges u -> v.
    let m = good.len();
    let mut level: Vec<Option<i64>> = vec![None; m];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &w in &edges[u] {
            let v = index_of[&w];
            if level[v].is_none() {
                level[v] = Some(level[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    debug_assert!(level.iter().all(|l| l.is_some()), "jump graph connected");
    let mut period = 0i64;
    for (u, targets) in edges.iter().enumerate() {
        for &w in targets {
            let v = index_of[&w];
            if let (Some(lu), Some(lv)) = (level[u], level[v]) {
                period = gcd(period, (lu + 1 - lv).abs());
            }
        }
    }
    Ok(period == 1)
}

/// For each member (by position), the members reachable along the shift
/// graph with every intermediate window outside the set.
fn restriction_support(good: &GoodSet) -> Vec<Vec<usize>> {
    let alphabet = good.alphabet();
    let k = good.depth();
    good.windows()
        .iter()
        .map(|&start| {
            let mut hits = Vec::new();
            let mut seen_bad = std::collections::BTreeSet::new();
            let mut frontier = vec![start];
            while let Some(s) = frontier.pop() {
                for b in alphabet.symbols() {
                    let next = shift(s, b, alphabet, k);
                    if good.contains(next) {
                        if !hits.contains(&next) {
                            hits.push(next);
                        }
                    } else if seen_bad.insert(next) {
                        frontier.push(next);
                    }
                }
            }
            hits.sort_unstable();
            hits
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

// ---------------------------------------------------------------------------
// Count concentration
// ---------------------------------------------------------------------------

/// The martingale block constant
/// `1 + 4 max(k_n, ell_n) / (eta^k_n (1 - Delta_k_n))`: how many future
/// good-window visits one revealed step can still influence.
pub fn b_constant(
    k_n: usize,
    ell_n: u64,
    eta: f64,
    big_delta_kn: f64,
) -> Result<f64, EstimatorError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(EstimatorError::EtaZero { eta });
    }
    if big_delta_kn >= 1.0 {
        return Err(EstimatorError::DeltaTooLarge {
            k: k_n,
            delta: big_delta_kn,
        });
    }
    let horizon = if k_n as u64 <= ell_n {
        ell_n as f64
    } else {
        k_n as f64
    };
    Ok(1.0 + 4.0 * horizon / (eta.powi(k_n as i32) * (1.0 - big_delta_kn)))
}

/// Total count of good windows in the sample.
pub fn n_tilde(counts: &SampleCounts, good: &GoodSet) -> u64 {
    good.windows().iter().map(|&w| counts.n_w(w)).sum()
}

/// Two-sided bound on `P(|N_w - n_tilde mu(w)/mu(G)| >= t)`:
/// `2 exp(-(t - B)^2 / (2 n_tilde B^2))` for `t > B`, clamped to the trivial
/// bound `1` elsewhere.  Requires the restriction to the good set to be
/// aperiodic.
pub fn stationary_certificate(
    counts: &SampleCounts,
    good: &GoodSet,
    b: f64,
    t: f64,
) -> Result<f64, EstimatorError> {
    if !restriction_aperiodic(good)? {
        return Err(EstimatorError::NotAperiodic);
    }
    Ok(certificate_bound(n_tilde(counts, good), b, t))
}

fn certificate_bound(n_tilde: u64, b: f64, t: f64) -> f64 {
    if t <= b {
        return 1.0;
    }
    let excess = t - b;
    (2.0 * (-excess * excess / (2.0 * n_tilde as f64 * b * b)).exp()).min(1.0)
}

/// Invert the concentration bound: the deviation `t` at which the two-sided
/// bound equals `c`, i.e. `t = B + B sqrt(2 n_tilde ln(2/c))`.  Meaningful
/// for `c` in `(0, 1]`.
pub fn certificate_threshold(n_tilde: u64, b: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0 && c <= 1.0, "confidence shortfall in (0, 1]");
    b + b * (2.0 * n_tilde as f64 * (2.0 / c).ln()).sqrt()
}

/// Count ratios `N_w / n_tilde` over the good set: point estimates of the
/// stationary law conditioned on the good set, the quantity the
/// concentration certificate speaks about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRatios {
    pub ratios: BTreeMap<ContextString, f64>,
    pub n_tilde: u64,
}

impl StationaryRatios {
    /// The certificate's deviation radius on the ratio scale at residual
    /// confidence `c`: `certificate_threshold(n_tilde, B, c) / n_tilde`.
    pub fn deviation(&self, b: f64, c: f64) -> f64 {
        certificate_threshold(self.n_tilde, b, c) / self.n_tilde as f64
    }
}

/// `N_w / n_tilde` for every good window.
pub fn stationary_ratio_estimates(
    counts: &SampleCounts,
    good: &GoodSet,
) -> Result<StationaryRatios, EstimatorError> {
    if good.is_empty() {
        return Err(EstimatorError::EmptyGoodSet);
    }
    let total = n_tilde(counts, good);
    if total == 0 {
        return Err(EstimatorError::EmptyGoodSet);
    }
    let ratios = good
        .windows()
        .iter()
        .map(|&w| {
            (
                ContextString::decode(w, good.depth(), good.alphabet()),
                counts.n_w(w) as f64 / total as f64,
            )
        })
        .collect();
    Ok(StationaryRatios {
        ratios,
        n_tilde: total,
    })
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

/// Everything a sample certifies at once: estimates at good states, the L1
/// certificate covering them, the coupling overlap, the block constant, and
/// ratio estimates of stationary probabilities within the good set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub n: u64,
    pub k_n: usize,
    /// `k_n / log2 n`.
    pub alpha_n: f64,
    /// Decay horizon: first depth whose iterated tail drops below `1/n`.
    pub ell_n: u64,
    /// Kernel estimates at good states: state -> per-input rows.
    pub theta_hat: BTreeMap<ContextString, Vec<Option<Vec<f64>>>>,
    pub good: GoodSet,
    pub l1_bound: f64,
    pub confidence: f64,
    /// Overlap computed from the estimated output laws, as observed.
    pub eta: f64,
    /// The same overlap deflated by the estimation error budget; used for
    /// the block constant.
    pub eta_conservative: f64,
    pub b: f64,
    pub n_tilde: u64,
    pub ratios: BTreeMap<ContextString, f64>,
}

/// Run the whole pipeline on one count table: good states, naive estimates,
/// certificates, overlap, block constant, and stationary ratios.  Errors
/// with `EmptyGoodSet` when nothing is certifiable at this depth, and with
/// `EtaZero` when the good set exists but its overlap (after deflation)
/// vanishes, since the block constant is then undefined.
pub fn estimate(
    counts: &SampleCounts,
    d: &DecayProfile,
    input: &InputLaw,
) -> Result<EstimationReport, EstimatorError> {
    let good = good_states(counts, d)?;
    if good.is_empty() {
        return Err(EstimatorError::EmptyGoodSet);
    }
    let alphabet = good.alphabet();
    let estimates = naive_estimates(counts);
    let cert = l1_certificate(alphabet, counts.n, counts.k, d)?;

    let mut q_hat = BTreeMap::new();
    let mut theta_hat = BTreeMap::new();
    for (&w, state) in good.windows().iter().zip(good.states()) {
        let law = estimates
            .output_distribution(w, input)
            .ok_or_else(|| EstimatorError::MissingDistribution(state.clone()))?;
        q_hat.insert(state.clone(), law);
        theta_hat.insert(state, estimates.window(w).to_vec());
    }

    let eta_raw = eta(&q_hat, &good)?;
    let eta_low = eta_conservative(eta_raw, cert.bound);
    let ell_n = d.coalescence_horizon(counts.n.max(1))?;
    let big_delta = d.big_delta(counts.k.max(1) as u64)?;
    // The block constant takes the overlap as observed; the deflated value
    // is reported alongside so a caller can rebuild a warier constant when
    // it stays positive.
    let b = b_constant(counts.k, ell_n, eta_raw, big_delta)?;
    let ratios = stationary_ratio_estimates(counts, &good)?;

    let log_n = (counts.n as f64).log2();
    Ok(EstimationReport {
        n: counts.n,
        k_n: counts.k,
        alpha_n: if log_n > 0.0 {
            counts.k as f64 / log_n
        } else {
            0.0
        },
        ell_n,
        theta_hat,
        good,
        l1_bound: cert.bound,
        confidence: cert.confidence,
        eta: eta_raw,
        eta_conservative: eta_low,
        b,
        n_tilde: ratios.n_tilde,
        ratios: ratios.ratios,
    })
}

//! Context-tree Markov models and their stationary laws.
//!
//! A model attaches to every leaf `s` of a full context tree a probability
//! distribution `q_s` over the next symbol.  Conditioned on the past, the
//! next output is drawn from `q_s` where `s` is the unique leaf matching the
//! most recent symbols, so the process is Markov with the leaves as states.
//! All distributions are strictly positive (entries below [`MIN_PROB`] are
//! rejected), which makes the state chain irreducible and aperiodic and the
//! stationary law unique.
//!
//! # Stationary solver
//!
//! The chain is solved on its complete reparameterization at depth
//! `kappa(T)` (all length-`kappa` windows as states), which is always a
//! well-defined Markov chain even when the leaf set itself is not closed
//! under shifts.  Small state spaces use Grassmann–Taksar–Heyman (GTH)
//! elimination: Gaussian elimination on `mu (Q - I) = 0` with the
//! normalization folded into back-substitution, arranged so that no
//! subtraction ever occurs.  That gives componentwise relative accuracy near
//! machine precision even for nearly reducible chains (spectral gap ~1e-12),
//! which plain LU or power iteration cannot deliver.  Larger state spaces
//! fall back to damped power iteration `x <- (x + xQ)/2` with a residual
//! stop rule.
//!
//! The leaf-level stationary vector is recovered by summing window
//! probabilities over each leaf's subtree, and `mu (Q - I)` residuals are
//! reported so callers can audit convergence.

use crate::strings::{Alphabet, ContextString};
use crate::tree::{ContextTree, TreeError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

/// Smallest admissible probability entry; anything below is rejected at
/// construction so that every conditional law is bounded away from zero.
pub const MIN_PROB: f64 = 1e-12;

/// Row sums may deviate from one by at most this much before normalization
/// (covers JSON rounding of hand-written model files).
pub const SUM_TOL: f64 = 1e-9;

/// State counts up to this bound are solved exactly by GTH elimination;
/// larger chains use power iteration.
pub const DENSE_LIMIT: usize = 4096;

/// Default residual tolerance for power iteration.
pub const POWER_TOL: f64 = 1e-12;

/// Default iteration cap for power iteration.
pub const POWER_CAP: u64 = 10_000_000;

/// Complete-tree state spaces larger than this are refused (memory guard).
pub const MAX_COMPLETE_STATES: u128 = 1 << 26;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("distribution for {context} has {got} entries, expected {want}")]
    WrongArity {
        context: ContextString,
        got: usize,
        want: usize,
    },
    #[error("probability {value} for {context} is below the minimum {MIN_PROB}")]
    ProbTooSmall { context: ContextString, value: f64 },
    #[error("probabilities for {context} sum to {sum}, outside 1 +/- {SUM_TOL}")]
    BadNormalization { context: ContextString, sum: f64 },
    #[error("missing distribution for leaf {0}")]
    MissingLeaf(ContextString),
    #[error("distribution given for {0}, which is not a leaf")]
    UnknownLeaf(ContextString),
    #[error("target depth {got} below tree depth {need}")]
    DepthTooSmall { got: usize, need: usize },
    #[error("complete state space at depth {0} exceeds the supported size")]
    StateSpaceTooLarge(usize),
    #[error("power iteration did not reach residual {tol} within {cap} iterations (achieved {residual})")]
    NoConvergence { tol: f64, cap: u64, residual: f64 },
    #[error("chain is numerically reducible (elimination pivot vanished at state {state})")]
    NotIrreducible { state: String },
}

// ---------------------------------------------------------------------------
// Model type and schema
// ---------------------------------------------------------------------------

/// JSON schema for a tree model: alphabet size, leaf strings, and one
/// next-symbol distribution per leaf keyed by the leaf string.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub alphabet: usize,
    pub leaves: Vec<String>,
    pub q: BTreeMap<String, Vec<f64>>,
}

/// A context-tree Markov model: a full tree plus per-leaf next-symbol laws.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct ContextTreeModel {
    tree: ContextTree,
    /// `q[leaf_id][symbol]`, strictly positive, each row summing to one.
    q: Vec<Vec<f64>>,
    #[serde(skip)]
    complete: OnceLock<Arc<CompleteChain>>,
    #[serde(skip)]
    stationary_cache: OnceLock<Arc<StationaryDist>>,
}

impl PartialEq for ContextTreeModel {
    fn eq(&self, other: &Self) -> bool {
        self.tree.alphabet() == other.tree.alphabet()
            && self.tree.leaves() == other.tree.leaves()
            && self.q == other.q
    }
}

impl TryFrom<ModelJson> for ContextTreeModel {
    type Error = ModelError;

    fn try_from(json: ModelJson) -> Result<Self, ModelError> {
        let alphabet = Alphabet::new(json.alphabet).map_err(TreeError::from)?;
        let mut leaves = Vec::with_capacity(json.leaves.len());
        for s in &json.leaves {
            leaves.push(s.parse::<ContextString>().map_err(TreeError::from)?);
        }
        let tree = ContextTree::validate(alphabet, leaves)?;
        let mut q = vec![Vec::new(); tree.num_leaves()];
        for (key, dist) in &json.q {
            let leaf: ContextString = key.parse().map_err(TreeError::from)?;
            let id = tree
                .leaf_id(&leaf)
                .ok_or_else(|| ModelError::UnknownLeaf(leaf.clone()))?;
            q[id] = dist.clone();
        }
        for (id, row) in q.iter().enumerate() {
            if row.is_empty() {
                return Err(ModelError::MissingLeaf(tree.leaf(id).clone()));
            }
        }
        ContextTreeModel::new(tree, q)
    }
}

impl From<ContextTreeModel> for ModelJson {
    fn from(m: ContextTreeModel) -> ModelJson {
        ModelJson {
            alphabet: m.tree.alphabet().size(),
            leaves: m.tree.leaves().iter().map(ToString::to_string).collect(),
            q: m.tree
                .leaves()
                .iter()
                .zip(&m.q)
                .map(|(leaf, row)| (leaf.to_string(), row.clone()))
                .collect(),
        }
    }
}

/// Validate a single probability row and return it exactly normalized.
pub(crate) fn validate_dist(
    context: &ContextString,
    row: &[f64],
    arity: usize,
) -> Result<Vec<f64>, ModelError> {
    if row.len() != arity {
        return Err(ModelError::WrongArity {
            context: context.clone(),
            got: row.len(),
            want: arity,
        });
    }
    for &p in row {
        if !(p >= MIN_PROB) {
            return Err(ModelError::ProbTooSmall {
                context: context.clone(),
                value: p,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(ModelError::BadNormalization {
            context: context.clone(),
            sum,
        });
    }
    Ok(row.iter().map(|p| p / sum).collect())
}

impl ContextTreeModel {
    /// Build a model from a validated tree and per-leaf rows (leaf order).
    /// Rows are normalized exactly after the positivity and sum checks.
    pub fn new(tree: ContextTree, q: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        assert_eq!(q.len(), tree.num_leaves(), "one distribution per leaf");
        let arity = tree.alphabet().size();
        let mut rows = Vec::with_capacity(q.len());
        for (id, row) in q.iter().enumerate() {
            rows.push(validate_dist(tree.leaf(id), row, arity)?);
        }
        Ok(ContextTreeModel {
            tree,
            q: rows,
            complete: OnceLock::new(),
            stationary_cache: OnceLock::new(),
        })
    }

    /// Convenience constructor from leaf strings and rows in the same order.
    pub fn from_parts(
        alphabet: usize,
        leaves: &[&str],
        rows: &[&[f64]],
    ) -> Result<Self, ModelError> {
        let a = Alphabet::new(alphabet).map_err(TreeError::from)?;
        let mut parsed: Vec<ContextString> = Vec::with_capacity(leaves.len());
        for s in leaves {
            parsed.push(s.parse().map_err(TreeError::from)?);
        }
        let tree = ContextTree::validate(a, parsed)?;
        // Rows were given in input order; re-key them to the canonical order.
        let mut q = vec![Vec::new(); tree.num_leaves()];
        for (s, row) in leaves.iter().zip(rows) {
            let leaf: ContextString = s.parse().unwrap();
            q[tree.leaf_id(&leaf).unwrap()] = row.to_vec();
        }
        ContextTreeModel::new(tree, q)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.tree.alphabet()
    }

    pub fn tree(&self) -> &ContextTree {
        &self.tree
    }

    /// Memory depth `kappa(T)`.
    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    /// Next-symbol law at a leaf.
    pub fn q(&self, leaf_id: usize) -> &[f64] {
        &self.q[leaf_id]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Next-symbol law given a history (most recent symbols last).
    pub fn q_given(&self, history: &[u8]) -> Result<&[f64], ModelError> {
        Ok(&self.q[self.tree.context_of(history)?])
    }

    // -----------------------------------------------------------------------
    // Complete view
    // -----------------------------------------------------------------------

    /// The chain over all depth-`kappa` windows (cached).
    pub fn complete_chain(&self) -> Result<Arc<CompleteChain>, ModelError> {
        if let Some(c) = self.complete.get() {
            return Ok(Arc::clone(c));
        }
        let built = Arc::new(CompleteChain::build(self)?);
        Ok(Arc::clone(self.complete.get_or_init(|| built)))
    }

    /// Reparameterize on the complete tree `A^depth`: every window of length
    /// `depth` becomes a leaf carrying the law of its original context.
    /// The process distribution is unchanged.
    pub fn reparameterize_complete(&self, depth: usize) -> Result<ContextTreeModel, ModelError> {
        if depth < self.tree.depth() {
            return Err(ModelError::DepthTooSmall {
                got: depth,
                need: self.tree.depth(),
            });
        }
        let a = self.alphabet();
        let n = a
            .pow_checked(depth as u32)
            .filter(|&n| n <= MAX_COMPLETE_STATES)
            .ok_or(ModelError::StateSpaceTooLarge(depth))? as usize;
        let tree = ContextTree::complete(a, depth)?;
        let mut q = Vec::with_capacity(n);
        for id in 0..n {
            let leaf = tree.leaf(id);
            let src = self.tree.context_of(leaf.symbols())?;
            q.push(self.q[src].clone());
        }
        ContextTreeModel::new(tree, q)
    }

    // -----------------------------------------------------------------------
    // Transition matrix and stationary law
    // -----------------------------------------------------------------------

    /// True iff the leaf set is closed under shifts: appending any symbol to
    /// any leaf determines a leaf again.  Complete trees always are; an
    /// unbalanced tree may fail (the next state then depends on symbols
    /// older than the current leaf).
    pub fn is_closed(&self) -> bool {
        self.tree.leaves().iter().all(|leaf| {
            self.alphabet().symbols().all(|a| {
                let mut h = leaf.symbols().to_vec();
                h.push(a);
                self.tree.context_of(&h).is_ok()
            })
        })
    }

    /// The transition matrix of the state chain.  For shift-closed trees the
    /// states are the leaves themselves; otherwise the matrix is formed on
    /// the complete depth-`kappa` window space, which parameterizes the same
    /// process.
    pub fn transition_matrix(&self) -> Result<TransitionMatrix, ModelError> {
        let a = self.alphabet();
        if self.is_closed() {
            let n = self.tree.num_leaves();
            let mut rows = vec![vec![0.0; n]; n];
            for (id, leaf) in self.tree.leaves().iter().enumerate() {
                for sym in a.symbols() {
                    let mut h = leaf.symbols().to_vec();
                    h.push(sym);
                    let next = self.tree.context_of(&h)?;
                    rows[id][next] += self.q[id][sym as usize];
                }
            }
            Ok(TransitionMatrix {
                states: self.tree.leaves().to_vec(),
                rows,
            })
        } else {
            let chain = self.complete_chain()?;
            let k = self.tree.depth();
            let n = chain.num_states();
            let mut rows = vec![vec![0.0; n]; n];
            for s in 0..n {
                for sym in a.symbols() {
                    rows[s][chain.step(s, sym)] += chain.q(s)[sym as usize];
                }
            }
            let states = (0..n)
                .map(|i| ContextString::decode(i, k, a))
                .collect();
            Ok(TransitionMatrix { states, rows })
        }
    }

    /// Stationary distribution over the leaves, with defaults (cached).
    pub fn stationary(&self) -> Result<Arc<StationaryDist>, ModelError> {
        if let Some(c) = self.stationary_cache.get() {
            return Ok(Arc::clone(c));
        }
        let built = Arc::new(self.stationary_with(POWER_TOL, POWER_CAP)?);
        Ok(Arc::clone(self.stationary_cache.get_or_init(|| built)))
    }

    /// Stationary distribution with explicit power-iteration parameters.
    ///
    /// Solves the complete window chain, then sums window probabilities over
    /// each leaf's subtree; all components of the result are positive and
    /// the achieved residual is reported.
    pub fn stationary_with(&self, tol: f64, cap: u64) -> Result<StationaryDist, ModelError> {
        let chain = self.complete_chain()?;
        let (mu_windows, residual, method) = chain.solve(tol, cap)?;
        let mut mu = vec![0.0; self.tree.num_leaves()];
        for (w, &p) in mu_windows.iter().enumerate() {
            mu[chain.leaf_of(w)] += p;
        }
        if mu.iter().any(|&p| !(p > 0.0)) {
            return Err(ModelError::NotIrreducible {
                state: "leaf with vanishing stationary mass".into(),
            });
        }
        Ok(StationaryDist {
            states: self.tree.leaves().to_vec(),
            mu,
            mu_windows,
            depth: self.tree.depth(),
            residual,
            method,
        })
    }

    /// Stationary probability that a window of `u.len()` consecutive outputs
    /// equals `u`.  For `|u| <= kappa` this sums window probabilities; for
    /// longer strings the chain rule extends the window one symbol at a
    /// time (each added conditional is determined by the previous `kappa`
    /// symbols).
    pub fn string_stationary_prob(&self, u: &ContextString) -> Result<f64, ModelError> {
        let chain = self.complete_chain()?;
        let st = self.stationary()?;
        let a = self.alphabet();
        let k = self.tree.depth();
        let m = u.len();
        if m <= k {
            let stride = a.pow_checked(m as u32).unwrap() as usize;
            let base = u.index(a);
            let total = chain.num_states() / stride.max(1);
            let mut p = 0.0;
            for prefix in 0..total {
                p += st.mu_windows[prefix * stride + base];
            }
            Ok(p)
        } else {
            let head = ContextString::from_raw(u.symbols()[..k].to_vec());
            let mut p = st.mu_windows[head.index(a)];
            for j in k..m {
                let ctx = self.tree.context_of(&u.symbols()[..j])?;
                p *= self.q[ctx][u.symbols()[j] as usize];
            }
            Ok(p)
        }
    }
}

/// Transition matrix of the state chain, with the state labels it is
/// expressed over.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub states: Vec<ContextString>,
    /// `rows[from][to]`; every row sums to one.
    pub rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn prob(&self, from: &ContextString, to: &ContextString) -> f64 {
        let i = self.states.iter().position(|s| s == from).expect("from state");
        let j = self.states.iter().position(|s| s == to).expect("to state");
        self.rows[i][j]
    }
}

/// How a stationary vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMethod {
    GthElimination,
    PowerIteration,
}

/// Stationary law of a model, over leaves and over depth-`kappa` windows.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryDist {
    pub states: Vec<ContextString>,
    /// Per-leaf probabilities, in leaf (canonical) order.
    pub mu: Vec<f64>,
    /// Per-window probabilities over `A^depth`, window-index order.
    pub mu_windows: Vec<f64>,
    pub depth: usize,
    /// Achieved `max |mu Q - mu|` on the window chain.
    pub residual: f64,
    pub method: SolveMethod,
}

impl StationaryDist {
    pub fn prob(&self, state: &ContextString) -> f64 {
        let i = self
            .states
            .iter()
            .position(|s| s == state)
            .expect("state present");
        self.mu[i]
    }
}

// ---------------------------------------------------------------------------
// Complete window chain
// ---------------------------------------------------------------------------

/// The Markov chain over all depth-`kappa` windows: window index `w`
/// advances to `(w * |A| + b) mod |A|^kappa` with probability `q_{c(w)}(b)`.
#[derive(Debug)]
pub struct CompleteChain {
    alphabet: Alphabet,
    depth: usize,
    num_states: usize,
    /// Leaf id for every window.
    leaf_of: Vec<u32>,
    /// Next-symbol law per window (shared rows with the model).
    q_rows: Vec<Vec<f64>>,
}

impl CompleteChain {
    fn build(model: &ContextTreeModel) -> Result<Self, ModelError> {
        let a = model.alphabet();
        let k = model.tree().depth();
        let n = a
            .pow_checked(k as u32)
            .filter(|&n| n <= MAX_COMPLETE_STATES)
            .ok_or(ModelError::StateSpaceTooLarge(k))? as usize;
        let mut leaf_of = Vec::with_capacity(n);
        for w in 0..n {
            let s = ContextString::decode(w, k, a);
            leaf_of.push(model.tree().context_of(s.symbols())? as u32);
        }
        Ok(CompleteChain {
            alphabet: a,
            depth: k,
            num_states: n,
            leaf_of,
            q_rows: model.q.clone(),
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn leaf_of(&self, window: usize) -> usize {
        self.leaf_of[window] as usize
    }

    /// Next-symbol law in a window.
    pub fn q(&self, window: usize) -> &[f64] {
        &self.q_rows[self.leaf_of[window] as usize]
    }

    /// Slide the window by one emitted symbol.
    pub fn step(&self, window: usize, symbol: u8) -> usize {
        (window * self.alphabet.size() + symbol as usize) % self.num_states
    }

    fn solve(&self, tol: f64, cap: u64) -> Result<(Vec<f64>, f64, SolveMethod), ModelError> {
        let mu = if self.num_states <= DENSE_LIMIT {
            self.solve_gth()?
        } else {
            self.solve_power(tol, cap)?
        };
        let residual = self.residual(&mu);
        let method = if self.num_states <= DENSE_LIMIT {
            SolveMethod::GthElimination
        } else {
            SolveMethod::PowerIteration
        };
        if self.num_states > DENSE_LIMIT && residual > tol {
            return Err(ModelError::NoConvergence {
                tol,
                cap,
                residual,
            });
        }
        Ok((mu, residual, method))
    }

    /// GTH elimination on the dense transition matrix.  Only additions,
    /// multiplications and divisions of nonnegative quantities occur, so the
    /// result is componentwise accurate regardless of the spectral gap.
    fn solve_gth(&self) -> Result<Vec<f64>, ModelError> {
        let n = self.num_states;
        let mut p = vec![0.0f64; n * n];
        for w in 0..n {
            let row = self.q(w);
            for b in self.alphabet.symbols() {
                p[w * n + self.step(w, b)] += row[b as usize];
            }
        }
        for k in (1..n).rev() {
            let s: f64 = (0..k).map(|j| p[k * n + j]).sum();
            if !(s > 0.0) {
                return Err(ModelError::NotIrreducible {
                    state: ContextString::decode(k, self.depth, self.alphabet).to_string(),
                });
            }
            for i in 0..k {
                p[i * n + k] /= s;
            }
            for i in 0..k {
                let pik = p[i * n + k];
                if pik == 0.0 {
                    continue;
                }
                for j in 0..k {
                    p[i * n + j] += pik * p[k * n + j];
                }
            }
        }
        let mut mu = vec![0.0f64; n];
        mu[0] = 1.0;
        for k in 1..n {
            mu[k] = (0..k).map(|i| mu[i] * p[i * n + k]).sum();
        }
        let total: f64 = mu.iter().sum();
        for m in &mut mu {
            *m /= total;
        }
        Ok(mu)
    }

    /// Damped power iteration `x <- (x + xQ)/2`; the damping removes any
    /// periodicity concern without changing the fixed point.
    fn solve_power(&self, tol: f64, cap: u64) -> Result<Vec<f64>, ModelError> {
        let n = self.num_states;
        let mut x = vec![1.0 / n as f64; n];
        let mut next = vec![0.0f64; n];
        let mut residual = f64::INFINITY;
        for _ in 0..cap {
            next.iter_mut().for_each(|v| *v = 0.0);
            for w in 0..n {
                let xw = x[w];
                if xw == 0.0 {
                    continue;
                }
                let row = self.q(w);
                for b in self.alphabet.symbols() {
                    next[self.step(w, b)] += xw * row[b as usize];
                }
            }
            residual = x
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            for (xi, ni) in x.iter_mut().zip(&next) {
                *xi = 0.5 * *xi + 0.5 * ni;
            }
            if residual <= tol {
                let total: f64 = x.iter().sum();
                for v in &mut x {
                    *v /= total;
                }
                return Ok(x);
            }
        }
        Err(ModelError::NoConvergence {
            tol,
            cap,
            residual,
        })
    }

    fn residual(&self, mu: &[f64]) -> f64 {
        let n = self.num_states;
        let mut image = vec![0.0f64; n];
        for w in 0..n {
            let row = self.q(w);
            for b in self.alphabet.symbols() {
                image[self.step(w, b)] += mu[w] * row[b as usize];
            }
        }
        mu.iter()
            .zip(&image)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

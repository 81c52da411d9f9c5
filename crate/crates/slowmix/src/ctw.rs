//! Input-conditioned context-tree weighting.
//!
//! A sequential coding distribution over output traces whose per-step
//! contexts are past *outputs* and whose leaf statistics are partitioned by
//! the current *input* symbol.  Every node keeps one add-half
//! (Krichevskii–Trofimov) estimator per input; internal nodes mix their own
//! estimate with the product of their children at weight 1/2; depth-`K`
//! nodes are pure estimators.  Unrolling the recursion, the root weight is
//! exactly a Bayes mixture over all pruned output-context trees of depth at
//! most `K` with prior `2^(-Gamma(T))`, where `Gamma` counts internal nodes
//! plus leaves short of depth `K` — the classical construction, applied per
//! input class.
//!
//! Its purpose here is the compression inequality
//!
//! ```text
//! log2 p_c >= sum_{w,a,b} N_w(b,a) log2( N_w(b,a) / N_w(a) )  -  |A|^(K+1) log2 n
//! ```
//!
//! i.e. the coding distribution trails the best depth-`K` conditional
//! Markov fit by at most `|A|^(K+1) log2 n` bits.  [`redundancy_certificate`]
//! evaluates both sides and reports the slack, which is nonnegative for
//! every trace of length at least two (a length-one trace costs the
//! estimator one bit while the budget is zero).
//!
//! All probability arithmetic lives in the base-2 log domain; trees are
//! allocated lazily along visited contexts, so memory scales with distinct
//! contexts seen rather than `|A|^(K+1)`.

use crate::simulator::{count, SampleCounts, SimulatorError, Trace};
use crate::strings::Alphabet;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CtwError {
    #[error("past of length {got} too short (need at least {need})")]
    PastTooShort { got: usize, need: usize },
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
}

/// Add-half sequential estimate of the next symbol given counts so far:
/// `(counts[next] + 1/2) / (total + |A|/2)`.
pub fn kt_sequential(counts: &[u64], next: u8) -> f64 {
    let total: u64 = counts.iter().sum();
    (counts[next as usize] as f64 + 0.5) / (total as f64 + counts.len() as f64 / 2.0)
}

/// `log2( (2^a + 2^b) / 2 )`, stably.
fn mix2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi - 1.0 + (1.0 + (lo - hi).exp2()).log2()
}

/// One context node: per-input counts, the running estimator log-probability
/// (summed over input classes), the cached sum of child weights, and the
/// mixed weight.
#[derive(Debug, Clone)]
struct Node {
    /// `counts[a * |A| + b]`.
    counts: Vec<u64>,
    /// `totals[a] = sum_b counts[a][b]`.
    totals: Vec<u64>,
    log_kt: f64,
    log_children: f64,
    log_w: f64,
    children: Vec<Option<usize>>,
}

impl Node {
    fn fresh(arity: usize) -> Node {
        Node {
            counts: vec![0; arity * arity],
            totals: vec![0; arity],
            log_kt: 0.0,
            log_children: 0.0,
            log_w: 0.0,
            children: vec![None; arity],
        }
    }

    fn kt_step(&self, a: u8, b: u8, arity: usize) -> f64 {
        let num = self.counts[a as usize * arity + b as usize] as f64 + 0.5;
        num / (self.totals[a as usize] as f64 + arity as f64 / 2.0)
    }
}

/// A depth-`K` weighted context tree over outputs, updated one
/// (input, output) pair at a time.
#[derive(Debug, Clone)]
pub struct CtwTree {
    alphabet: Alphabet,
    depth: usize,
    arena: Vec<Node>,
    n: u64,
}

impl CtwTree {
    pub fn new(alphabet: Alphabet, depth: usize) -> CtwTree {
        CtwTree {
            alphabet,
            depth,
            arena: vec![Node::fresh(alphabet.size())],
            n: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn symbols_seen(&self) -> u64 {
        self.n
    }

    /// `log2 p_c` of everything fed so far.
    pub fn log_prob(&self) -> f64 {
        self.arena[0].log_w
    }

    /// Path of node ids from the root along `window` (most recent output
    /// last), allocating missing nodes.
    fn path_mut(&mut self, window: &[u8]) -> Vec<usize> {
        debug_assert!(window.len() >= self.depth);
        let arity = self.alphabet.size();
        let mut path = Vec::with_capacity(self.depth + 1);
        let mut at = 0usize;
        path.push(at);
        for d in 1..=self.depth {
            let sym = window[window.len() - d] as usize;
            let next = match self.arena[at].children[sym] {
                Some(i) => i,
                None => {
                    self.arena.push(Node::fresh(arity));
                    let i = self.arena.len() - 1;
                    self.arena[at].children[sym] = Some(i);
                    i
                }
            };
            path.push(next);
            at = next;
        }
        path
    }

    /// Feed one step: output `b` under input `a` in context `window` (the
    /// last `depth` outputs, oldest first).  Returns the step's conditional
    /// `log2` probability.
    pub fn update(&mut self, window: &[u8], a: u8, b: u8) -> f64 {
        let arity = self.alphabet.size();
        let path = self.path_mut(window);
        let before = self.arena[0].log_w;
        let mut child_delta = 0.0;
        for (d, &i) in path.iter().enumerate().rev() {
            let node = &mut self.arena[i];
            let step = node.kt_step(a, b, arity);
            node.counts[a as usize * arity + b as usize] += 1;
            node.totals[a as usize] += 1;
            node.log_kt += step.log2();
            let old_w = node.log_w;
            node.log_w = if d == self.depth {
                node.log_kt
            } else {
                node.log_children += child_delta;
                mix2(node.log_kt, node.log_children)
            };
            child_delta = node.log_w - old_w;
        }
        self.n += 1;
        self.arena[0].log_w - before
    }

    /// What the root weight would become after seeing output `b` under
    /// input `a` in `window`, without mutating anything.  Contexts never
    /// visited behave as fresh nodes: at any depth their would-be weight is
    /// `log2(1/|A|)`.
    fn preview(&self, window: &[u8], a: u8, b: u8) -> f64 {
        let arity = self.alphabet.size();
        let mut path: Vec<Option<usize>> = Vec::with_capacity(self.depth + 1);
        let mut at = Some(0usize);
        path.push(at);
        for d in 1..=self.depth {
            let sym = window[window.len() - d] as usize;
            at = at.and_then(|i| self.arena[i].children[sym]);
            path.push(at);
        }
        let mut new_w = 0.0;
        for d in (0..=self.depth).rev() {
            new_w = match path[d] {
                None => -(arity as f64).log2(),
                Some(i) => {
                    let node = &self.arena[i];
                    let log_kt = node.log_kt + node.kt_step(a, b, arity).log2();
                    if d == self.depth {
                        log_kt
                    } else {
                        let old_child = match path[d + 1] {
                            Some(c) => self.arena[c].log_w,
                            None => 0.0,
                        };
                        mix2(log_kt, node.log_children + (new_w - old_child))
                    }
                }
            };
        }
        new_w
    }

    /// The one-step conditional distribution over the next output given
    /// input `a` in context `window`.  Sums to one up to rounding.
    pub fn step_distribution(&self, window: &[u8], a: u8) -> Vec<f64> {
        let before = self.arena[0].log_w;
        self.alphabet
            .symbols()
            .map(|b| (self.preview(window, a, b) - before).exp2())
            .collect()
    }
}

/// `log2 p_c(y | x, past)` of a whole trace under depth-`K` weighting.
pub fn ctw_probability(trace: &Trace, k: usize) -> Result<f64, CtwError> {
    Ok(build_tree(trace, k)?.log_prob())
}

fn build_tree(trace: &Trace, k: usize) -> Result<CtwTree, CtwError> {
    if trace.past.len() < k {
        return Err(CtwError::PastTooShort {
            got: trace.past.len(),
            need: k,
        });
    }
    let alphabet = Alphabet::new(trace.alphabet).expect("trace carries a valid alphabet");
    let mut tree = CtwTree::new(alphabet, k);
    let mut window: Vec<u8> = trace.past.suffix(k).symbols().to_vec();
    for (&a, &b) in trace.x.iter().zip(&trace.y) {
        tree.update(&window, a, b);
        window.push(b);
        if window.len() > k {
            window.remove(0);
        }
    }
    Ok(tree)
}

/// Both sides of the compression inequality for one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RedundancyCertificate {
    pub n: u64,
    pub k: usize,
    /// `log2 p_c(y | x, past)`.
    pub log_pc: f64,
    /// `sum N_w(b,a) log2(N_w(b,a)/N_w(a))`: the best depth-`k` conditional
    /// Markov fit (`0 log 0 = 0`).
    pub log_ml: f64,
    /// `|A|^(k+1) log2 n` (zero for an empty trace).
    pub budget: f64,
    /// `log_pc - log_ml + budget`; nonnegative whenever `n >= 2`.
    pub slack: f64,
}

/// Evaluate the inequality `log2 p_c >= log2 ML - |A|^(k+1) log2 n` on one
/// trace: the weighted coding distribution, the maximum-likelihood fit from
/// depth-`k` counts, and the slack between them.
pub fn redundancy_certificate(
    trace: &Trace,
    k: usize,
) -> Result<RedundancyCertificate, CtwError> {
    let log_pc = ctw_probability(trace, k)?;
    let counts = count(trace, k)?;
    let log_ml = max_likelihood_log2(&counts);
    let n = trace.len() as u64;
    let budget = if n == 0 {
        0.0
    } else {
        (counts.alphabet as f64).powi(k as i32 + 1) * (n as f64).log2()
    };
    Ok(RedundancyCertificate {
        n,
        k,
        log_pc,
        log_ml,
        budget,
        slack: log_pc - log_ml + budget,
    })
}

/// `sum_{w,a,b} N_w(b,a) log2( N_w(b,a) / N_w(a) )`.
fn max_likelihood_log2(counts: &SampleCounts) -> f64 {
    let arity = counts.alphabet as u8;
    let mut total = 0.0;
    for w in 0..counts.num_windows() {
        for a in 0..arity {
            let n_a = counts.n_w_a(w, a);
            if n_a == 0 {
                continue;
            }
            for b in 0..arity {
                let n_ba = counts.n_w_b_a(w, b, a);
                if n_ba > 0 {
                    total += n_ba as f64 * (n_ba as f64 / n_a as f64).log2();
                }
            }
        }
    }
    total
}

//! Output-memory channels.
//!
//! A channel attaches to every leaf `s` of a full context tree (over the
//! *output* alphabet) a family of conditional laws `theta_s(b | a)`: the
//! probability of emitting output `b` when the current input is `a` and the
//! most recent outputs match `s`.  Inputs are drawn i.i.d. from a fixed
//! positive law `p`, and there is no feedback, so the pair process
//! `(X_t, Y_t)` is itself a context-tree Markov process whose state depends
//! only on the output coordinates.
//!
//! Two derived processes matter everywhere downstream:
//!
//! * the **output process** `q_s(b) = sum_a p_a theta_s(b | a)`, a plain
//!   tree model over the outputs (this is what simulation, aggregation and
//!   coupling run on);
//! * the **joint process** over the pair alphabet, used to sanity-check
//!   stationary laws and information quantities.
//!
//! [`ChannelModel::verify_membership`] checks the dependency-decay
//! condition: for every pair of histories that agree on the `i` most recent
//! outputs, the conditional laws (aggregated to that depth under the
//! stationary law) have multiplicative ratios within `d(i)` of one.  For
//! complete-tree channels the ratios vanish identically beyond the tree
//! depth, so checking up to a finite `max_depth >= kappa(T)` is exhaustive.

use crate::model::{validate_dist, ContextTreeModel, ModelError};
use crate::strings::{Alphabet, ContextString};
use crate::tree::{ContextTree, TreeError};
use crate::decay::DecayProfile;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("missing conditional law for leaf {leaf}, input {input}")]
    MissingKernel { leaf: ContextString, input: u8 },
    #[error("joint process needs a pair alphabet of size {0}^2, beyond the supported encoding")]
    PairAlphabetTooLarge(usize),
    #[error("membership check depth {got} below the tree depth {need}")]
    DepthTooShallow { got: usize, need: usize },
}

/// Slack added to the decay allowance when comparing aggregated kernel
/// ratios, absorbing round-off from the mass-weighted averages (a profile
/// that is identically zero must still accept channels whose deeper kernels
/// agree exactly in exact arithmetic).
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// An i.i.d. input law: a strictly positive distribution over the alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputLaw(Vec<f64>);

impl InputLaw {
    pub fn new(p: Vec<f64>, alphabet: Alphabet) -> Result<Self, ModelError> {
        Ok(InputLaw(validate_dist(
            &ContextString::empty(),
            &p,
            alphabet.size(),
        )?))
    }

    pub fn uniform(alphabet: Alphabet) -> Self {
        InputLaw(vec![1.0 / alphabet.size() as f64; alphabet.size()])
    }
}

impl std::ops::Deref for InputLaw {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// JSON schema for a channel: tree leaves over the output alphabet, one
/// conditional law per (leaf, input), and the i.i.d. input law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelJson {
    pub alphabet: usize,
    pub leaves: Vec<String>,
    /// `theta[leaf][input digit] -> distribution over outputs`.
    pub theta: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub input: Vec<f64>,
}

/// An output-memory channel under an i.i.d. input law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ChannelJson", into = "ChannelJson")]
pub struct ChannelModel {
    tree: ContextTree,
    /// `theta[leaf_id][a][b]`, each row positive and summing to one.
    theta: Vec<Vec<Vec<f64>>>,
    input: InputLaw,
    #[serde(skip)]
    output_cache: OnceLock<Arc<ContextTreeModel>>,
}

impl PartialEq for ChannelModel {
    fn eq(&self, other: &Self) -> bool {
        self.tree.alphabet() == other.tree.alphabet()
            && self.tree.leaves() == other.tree.leaves()
            && self.theta == other.theta
            && self.input == other.input
    }
}

impl TryFrom<ChannelJson> for ChannelModel {
    type Error = ChannelError;

    fn try_from(json: ChannelJson) -> Result<Self, ChannelError> {
        let alphabet = Alphabet::new(json.alphabet).map_err(TreeError::from)?;
        let mut leaves = Vec::with_capacity(json.leaves.len());
        for s in &json.leaves {
            leaves.push(s.parse::<ContextString>().map_err(TreeError::from)?);
        }
        let tree = ContextTree::validate(alphabet, leaves)?;
        let mut theta = vec![Vec::new(); tree.num_leaves()];
        for (key, kernels) in &json.theta {
            let leaf: ContextString = key.parse().map_err(TreeError::from)?;
            let id = tree
                .leaf_id(&leaf)
                .ok_or_else(|| ModelError::UnknownLeaf(leaf.clone()))?;
            let mut rows = vec![Vec::new(); alphabet.size()];
            for (a_key, dist) in kernels {
                let a: ContextString = a_key.parse().map_err(TreeError::from)?;
                if a.len() != 1 || !alphabet.contains(a.symbols()[0]) {
                    return Err(ModelError::UnknownLeaf(a).into());
                }
                rows[a.symbols()[0] as usize] = dist.clone();
            }
            theta[id] = rows;
        }
        ChannelModel::new(tree, theta, json.input)
    }
}

impl From<ChannelModel> for ChannelJson {
    fn from(ch: ChannelModel) -> ChannelJson {
        ChannelJson {
            alphabet: ch.tree.alphabet().size(),
            input: ch.input.to_vec(),
            leaves: ch.tree.leaves().iter().map(ToString::to_string).collect(),
            theta: ch
                .tree
                .leaves()
                .iter()
                .zip(&ch.theta)
                .map(|(leaf, rows)| {
                    (
                        leaf.to_string(),
                        rows.iter()
                            .enumerate()
                            .map(|(a, dist)| (a.to_string(), dist.clone()))
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

impl ChannelModel {
    /// Build a channel from a validated tree, kernels `theta[leaf][a][b]`
    /// (leaf order), and the input law.
    pub fn new(
        tree: ContextTree,
        theta: Vec<Vec<Vec<f64>>>,
        input: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        assert_eq!(theta.len(), tree.num_leaves(), "one kernel set per leaf");
        let arity = tree.alphabet().size();
        let input = InputLaw::new(input, tree.alphabet())?;
        let mut rows = Vec::with_capacity(theta.len());
        for (id, kernels) in theta.iter().enumerate() {
            if kernels.len() != arity {
                return Err(ChannelError::MissingKernel {
                    leaf: tree.leaf(id).clone(),
                    input: kernels.len() as u8,
                });
            }
            let mut per_input = Vec::with_capacity(arity);
            for (a, dist) in kernels.iter().enumerate() {
                if dist.is_empty() {
                    return Err(ChannelError::MissingKernel {
                        leaf: tree.leaf(id).clone(),
                        input: a as u8,
                    });
                }
                per_input.push(validate_dist(tree.leaf(id), dist, arity)?);
            }
            rows.push(per_input);
        }
        Ok(ChannelModel {
            tree,
            theta: rows,
            input,
            output_cache: OnceLock::new(),
        })
    }

    /// Wrap an output process as an input-independent channel: every input
    /// symbol produces the same conditional law `q_s`.  The output process
    /// of the result is the original model again.
    pub fn from_output_process(
        model: &ContextTreeModel,
        input: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        let arity = model.alphabet().size();
        let theta = model
            .rows()
            .iter()
            .map(|q| vec![q.clone(); arity])
            .collect();
        ChannelModel::new(model.tree().clone(), theta, input)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.tree.alphabet()
    }

    pub fn tree(&self) -> &ContextTree {
        &self.tree
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn input_law(&self) -> &InputLaw {
        &self.input
    }

    /// Conditional output laws at a leaf: `theta(leaf)[a][b]`.
    pub fn theta(&self, leaf_id: usize) -> &Vec<Vec<f64>> {
        &self.theta[leaf_id]
    }

    pub fn kernels(&self) -> &[Vec<Vec<f64>>] {
        &self.theta
    }

    /// The output process `q_s(b) = sum_a p_a theta_s(b | a)` (cached).
    pub fn output_process(&self) -> Result<Arc<ContextTreeModel>, ChannelError> {
        if let Some(m) = self.output_cache.get() {
            return Ok(Arc::clone(m));
        }
        let arity = self.alphabet().size();
        let mut q = Vec::with_capacity(self.theta.len());
        for kernels in &self.theta {
            let mut row = vec![0.0; arity];
            for (a, dist) in kernels.iter().enumerate() {
                for (b, &t) in dist.iter().enumerate() {
                    row[b] += self.input[a] * t;
                }
            }
            q.push(row);
        }
        let model = Arc::new(ContextTreeModel::new(self.tree.clone(), q)?);
        Ok(Arc::clone(self.output_cache.get_or_init(|| model)))
    }

    /// Encode an input/output pair as a symbol of the pair alphabet
    /// (input-major: `a * |A| + b`).
    pub fn pair_symbol(&self, a: u8, b: u8) -> u8 {
        a * self.alphabet().size() as u8 + b
    }

    /// The joint pair process `(X_t, Y_t)` as a tree model over the pair
    /// alphabet.  Each output leaf `s` spawns `|A|^|s|` pair leaves (one per
    /// assignment of input coordinates), all carrying the law
    /// `q'(a, b) = p_a theta_s(b | a)`; the context therefore depends on
    /// the output coordinates alone, as it must for a channel without
    /// feedback.
    pub fn joint_process(&self) -> Result<ContextTreeModel, ChannelError> {
        let a_size = self.alphabet().size();
        let pair_size = a_size * a_size;
        let pair_alphabet = Alphabet::new(pair_size)
            .map_err(|_| ChannelError::PairAlphabetTooLarge(a_size))?;

        // One pair leaf per (output leaf, assignment of input coordinates).
        let mut leaves = Vec::new();
        for s in self.tree.leaves() {
            let m = s.len();
            let combos = (a_size as u64).pow(m as u32);
            for combo in 0..combos {
                let mut pair = Vec::with_capacity(m);
                let mut c = combo;
                for &y in s.symbols() {
                    let x = (c % a_size as u64) as u8;
                    c /= a_size as u64;
                    pair.push(x * a_size as u8 + y);
                }
                leaves.push(ContextString::new(pair, pair_alphabet).map_err(TreeError::from)?);
            }
        }
        let tree = ContextTree::validate(pair_alphabet, leaves)?;
        // Validation sorts leaves, so rebuild each row from the canonical
        // order by projecting the pair leaf back onto its output context.
        let mut q = vec![Vec::new(); tree.num_leaves()];
        for (id, pair_leaf) in tree.leaves().iter().enumerate() {
            let y: Vec<u8> = pair_leaf
                .symbols()
                .iter()
                .map(|&p| p % a_size as u8)
                .collect();
            let src = self.tree.context_of(&y)?;
            debug_assert_eq!(y.len(), self.tree.leaf(src).len());
            let mut row = vec![0.0; pair_size];
            for (a, dist) in self.theta[src].iter().enumerate() {
                for (b, &t) in dist.iter().enumerate() {
                    row[a * a_size + b] = self.input[a] * t;
                }
            }
            q[id] = row;
        }
        Ok(ContextTreeModel::new(tree, q)?)
    }

    /// Check the dependency-decay condition against `d` for all history
    /// extensions up to `max_depth` symbols.
    ///
    /// For each depth `i` in `1..max_depth`, the channel kernels aggregated
    /// to depth `i + 1` under the stationary output law are compared across
    /// sibling histories `c u` vs `c' u` (`|u| = i`): the worst ratio
    /// deviation `|theta(cu) / theta(c'u) - 1|` must not exceed `d(i)`.
    /// Depths at or beyond `kappa(T)` have identical kernels for complete
    /// trees, so deviations there are exactly zero.
    pub fn verify_membership(
        &self,
        d: &DecayProfile,
        max_depth: usize,
    ) -> Result<MembershipReport, ChannelError> {
        let kappa = self.tree.depth();
        if max_depth < kappa {
            return Err(ChannelError::DepthTooShallow {
                got: max_depth,
                need: kappa,
            });
        }
        let a = self.alphabet();
        let arity = a.size();
        let big = max_depth.max(kappa).max(1);

        // Stationary window law and per-window kernels at depth `big`.
        let output = self.output_process()?;
        let complete = output.reparameterize_complete(big)?;
        let windows = complete.stationary()?.mu_windows.clone();
        let n_big = windows.len();
        let theta_of_window: Vec<&Vec<Vec<f64>>> = (0..n_big)
            .map(|w| {
                let s = ContextString::decode(w, big, a);
                let id = self.tree.context_of(s.symbols()).expect("window has context");
                &self.theta[id]
            })
            .collect();

        let mut report = MembershipReport {
            member: true,
            checked_depth: max_depth,
            worst: None,
        };

        // Aggregate to each level L = i + 1 and compare siblings.
        for i in 1..max_depth {
            let level = i + 1;
            let n_level = arity.pow(level as u32);
            // Stationary mass and mass-weighted kernels per length-`level`
            // window (windows of length `big` sharing a suffix share `w`).
            let mut mass = vec![0.0f64; n_level];
            let mut mixed = vec![vec![vec![0.0f64; arity]; arity]; n_level];
            for v in 0..n_big {
                let w = v % n_level;
                let m = windows[v];
                mass[w] += m;
                let th = theta_of_window[v];
                for x in 0..arity {
                    for y in 0..arity {
                        mixed[w][x][y] += m * th[x][y];
                    }
                }
            }
            for (kernels, &m) in mixed.iter_mut().zip(&mass) {
                for row in kernels.iter_mut() {
                    for p in row.iter_mut() {
                        *p /= m;
                    }
                }
            }

            let allowed = d.d(i as u64);
            let n_u = arity.pow(i as u32);
            for u in 0..n_u {
                for c in 0..arity {
                    let w1 = c * n_u + u;
                    for c2 in 0..arity {
                        if c2 == c {
                            continue;
                        }
                        let w2 = c2 * n_u + u;
                        for x in 0..arity {
                            for y in 0..arity {
                                let ratio = mixed[w1][x][y] / mixed[w2][x][y];
                                let deviation = (ratio - 1.0).abs();
                                let margin = deviation - allowed;
                                let record = match &report.worst {
                                    None => true,
                                    Some(worst) => margin > worst.deviation - worst.allowed,
                                };
                                if record {
                                    report.worst = Some(MembershipWorst {
                                        depth: i,
                                        recent: ContextString::decode(u, i, a),
                                        older: c as u8,
                                        older_alt: c2 as u8,
                                        input: x as u8,
                                        output: y as u8,
                                        deviation,
                                        allowed,
                                    });
                                }
                                if deviation > allowed + MEMBERSHIP_TOL {
                                    report.member = false;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Result of a dependency-decay membership check.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    pub checked_depth: usize,
    /// The comparison with the largest deviation-over-allowance margin.
    pub worst: Option<MembershipWorst>,
}

/// The arg-max comparison of a membership check: histories `older . recent`
/// vs `older_alt . recent` at the given input/output pair.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipWorst {
    /// Number of shared recent symbols (`i` in `d(i)`).
    pub depth: usize,
    pub recent: ContextString,
    pub older: u8,
    pub older_alt: u8,
    pub input: u8,
    pub output: u8,
    pub deviation: f64,
    pub allowed: f64,
}

//! Depth-`k` aggregation of tree processes and channels.
//!
//! Aggregating a model to depth `k` replaces its context tree by the
//! complete tree over `A^k` and averages the conditional laws under the
//! stationary law: for a window `w` of length `k`,
//!
//! ```text
//! q~_w(b) = sum_{v in A^D, w suffix of v} mu(v) q_{c(v)}(b) / sum_v mu(v)
//! ```
//!
//! where `D = max(kappa, k)` and `c(v)` is the context of `v` in the source
//! tree.  When every window above `w` shares a single source context the
//! average collapses and the source row is copied verbatim, so refining
//! (`k >= kappa`) and aggregating along single-context branches are
//! bit-exact.
//!
//! Aggregation commutes with the stationary law: the lumped chain's
//! stationary distribution equals the aggregated window masses.
//! [`AggregatedModel::check_stationary`] verifies that identity by solving
//! the lumped chain independently and comparing — a disagreement beyond
//! numerical tolerance indicates a bug, not a modeling artifact, and is
//! reported as [`AggregationError::InconsistentAggregation`].
//!
//! [`die_out_sandwich`] computes the multiplicative bracket that aggregated
//! laws of a decay-profile member must satisfy:
//! `(1 - delta_k) max_v q_v(b) <= q~_w(b) <= min_v q_v(b) / (1 - delta_k)`,
//! with the max/min running over source contexts above `w`.

use crate::channel::{ChannelError, ChannelModel};
use crate::decay::{DecayError, DecayProfile};
use crate::model::{ContextTreeModel, ModelError};
use crate::strings::ContextString;
use crate::tree::ContextTree;
use serde::Serialize;
use thiserror::Error;

/// Tolerance for the lumped-vs-aggregated stationary cross-check.  Both
/// sides come out of dense eliminations that are componentwise accurate, so
/// anything beyond this is a genuine inconsistency.
pub const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error(
        "lumped stationary law disagrees with aggregated window masses \
         (max difference {max_diff:.3e})"
    )]
    InconsistentAggregation { max_diff: f64 },
    #[error("decay tail delta_{k} = {delta} is not below one; sandwich bounds are vacuous")]
    DeltaTooLarge { k: usize, delta: f64 },
}

/// A tree model aggregated to the complete tree of depth `k`, together with
/// the window masses inherited from the source stationary law.
#[derive(Debug, Clone, Serialize)]
pub struct AggregatedModel {
    /// Complete-tree model over `A^k` with the averaged rows.
    pub model: ContextTreeModel,
    /// Stationary mass of each window, aggregated from the source law
    /// (window-index order, sums to one).
    pub mass: Vec<f64>,
    /// Aggregation depth `k`.
    pub depth: usize,
    /// Depth of the complete view the average was taken over.
    pub source_depth: usize,
}

impl AggregatedModel {
    /// Aggregated law of window `w` (given as a length-`k` string).
    pub fn q_tilde(&self, w: &ContextString) -> &[f64] {
        self.model.q(w.index(self.model.alphabet()))
    }

    pub fn mass_of(&self, w: &ContextString) -> f64 {
        self.mass[w.index(self.model.alphabet())]
    }

    /// Verify that the lumped chain's stationary law reproduces the
    /// aggregated masses, returning the observed maximum difference.
    pub fn check_stationary(&self) -> Result<f64, AggregationError> {
        let lumped = self.model.stationary()?;
        let max_diff = lumped
            .mu_windows
            .iter()
            .zip(&self.mass)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if max_diff > CONSISTENCY_TOL {
            return Err(AggregationError::InconsistentAggregation { max_diff });
        }
        Ok(max_diff)
    }
}

/// A channel aggregated to the complete output tree of depth `k`.
#[derive(Debug, Clone, Serialize)]
pub struct AggregatedChannel {
    /// Channel over the complete depth-`k` tree with averaged kernels.
    pub channel: ChannelModel,
    /// Stationary output-window masses inherited from the source.
    pub mass: Vec<f64>,
    pub depth: usize,
    pub source_depth: usize,
}

impl AggregatedChannel {
    /// Aggregated kernel of window `w`: `theta~(w)[a][b]`.
    pub fn theta_tilde(&self, w: &ContextString) -> &Vec<Vec<f64>> {
        self.channel.theta(w.index(self.channel.alphabet()))
    }

    pub fn mass_of(&self, w: &ContextString) -> f64 {
        self.mass[w.index(self.channel.alphabet())]
    }
}

/// Window masses and per-window source context ids over `A^D`, grouped by
/// the depth-`k` suffix.
struct Groups {
    /// For each window `w` in `A^k`: (mass, members as (source leaf id, mu)).
    per_window: Vec<(f64, Vec<(usize, f64)>)>,
    source_depth: usize,
}

fn group_windows(model: &ContextTreeModel, k: usize) -> Result<Groups, ModelError> {
    let arity = model.alphabet().size();
    let big = model.depth().max(k).max(1);
    let mu_big: Vec<f64> = if big == model.depth() {
        model.stationary()?.mu_windows.clone()
    } else {
        model
            .reparameterize_complete(big)?
            .stationary()?
            .mu_windows
            .clone()
    };
    let n_big = mu_big.len();
    let n_k = arity.pow(k as u32);
    let mut per_window = vec![(0.0, Vec::new()); n_k];
    for v in 0..n_big {
        let s = ContextString::decode(v, big, model.alphabet());
        let id = model
            .tree()
            .context_of(s.symbols())
            .expect("complete window has a context");
        let slot = &mut per_window[v % n_k];
        slot.0 += mu_big[v];
        slot.1.push((id, mu_big[v]));
    }
    Ok(Groups {
        per_window,
        source_depth: big,
    })
}

/// Average a family of per-context rows over one window group, copying the
/// source row verbatim when the group visits a single context.
fn average_rows<'a>(
    group: &(f64, Vec<(usize, f64)>),
    row_of: impl Fn(usize) -> &'a [f64],
    width: usize,
) -> Vec<f64> {
    let (mass, members) = group;
    let first = members[0].0;
    if members.iter().all(|&(id, _)| id == first) {
        return row_of(first).to_vec();
    }
    let mut row = vec![0.0; width];
    for &(id, mu) in members {
        let src = row_of(id);
        for (acc, &p) in row.iter_mut().zip(src) {
            *acc += mu * p;
        }
    }
    for p in row.iter_mut() {
        *p /= mass;
    }
    row
}

/// Aggregate a tree model to the complete tree of depth `k`.
pub fn aggregate_process(
    model: &ContextTreeModel,
    k: usize,
) -> Result<AggregatedModel, AggregationError> {
    let arity = model.alphabet().size();
    let groups = group_windows(model, k)?;
    let tree = ContextTree::complete(model.alphabet(), k).map_err(ModelError::from)?;
    let rows: Vec<Vec<f64>> = groups
        .per_window
        .iter()
        .map(|g| average_rows(g, |id| model.q(id), arity))
        .collect();
    let mass = groups.per_window.iter().map(|g| g.0).collect();
    Ok(AggregatedModel {
        model: ContextTreeModel::new(tree, rows)?,
        mass,
        depth: k,
        source_depth: groups.source_depth,
    })
}

/// Aggregate a channel's kernels to the complete output tree of depth `k`,
/// weighting by the stationary law of the output process.
pub fn aggregate_channel(
    ch: &ChannelModel,
    k: usize,
) -> Result<AggregatedChannel, AggregationError> {
    let arity = ch.alphabet().size();
    let output = ch.output_process()?;
    let groups = group_windows(&output, k)?;
    let tree = ContextTree::complete(ch.alphabet(), k).map_err(ModelError::from)?;
    let theta: Vec<Vec<Vec<f64>>> = groups
        .per_window
        .iter()
        .map(|g| {
            (0..arity)
                .map(|a| average_rows(g, |id| &ch.theta(id)[a], arity))
                .collect()
        })
        .collect();
    let mass = groups.per_window.iter().map(|g| g.0).collect();
    Ok(AggregatedChannel {
        channel: ChannelModel::new(tree, theta, ch.input_law().to_vec())?,
        mass,
        depth: k,
        source_depth: groups.source_depth,
    })
}

/// Multiplicative bracket that depth-`k` aggregated laws must satisfy when
/// the source obeys the decay profile `d`: for every window `w` and symbol
/// `b`, `lower[w][b] <= q~_w(b) <= upper[w][b]` where the bounds are the
/// subtree extremes scaled by `1 - delta_k`.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichBounds {
    pub depth: usize,
    pub delta_k: f64,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl SandwichBounds {
    /// Check an aggregated model against the bracket, returning the worst
    /// (most negative) margin.
    pub fn margin(&self, agg: &AggregatedModel) -> f64 {
        let mut worst = f64::INFINITY;
        for (w, row) in agg.model.rows().iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                worst = worst.min(p - self.lower[w][b]);
                worst = worst.min(self.upper[w][b] - p);
            }
        }
        worst
    }
}

/// Compute the die-out bracket for aggregating `model` to depth `k` under
/// the decay profile `d`.  Fails with [`AggregationError::DeltaTooLarge`]
/// when `delta_k >= 1`.
pub fn die_out_sandwich(
    model: &ContextTreeModel,
    k: usize,
    d: &DecayProfile,
) -> Result<SandwichBounds, AggregationError> {
    let delta_k = d.delta(k as u64)?;
    if !(delta_k < 1.0) {
        return Err(AggregationError::DeltaTooLarge { k, delta: delta_k });
    }
    let arity = model.alphabet().size();
    let groups = group_windows(model, k)?;
    let mut lower = Vec::with_capacity(groups.per_window.len());
    let mut upper = Vec::with_capacity(groups.per_window.len());
    for (_, members) in &groups.per_window {
        let mut lo = vec![f64::INFINITY; arity];
        let mut hi = vec![0.0f64; arity];
        for &(id, _) in members {
            for (b, &p) in model.q(id).iter().enumerate() {
                lo[b] = lo[b].min(p);
                hi[b] = hi[b].max(p);
            }
        }
        // Lower bound uses the subtree maximum, upper the minimum: members
        // of a decay class cannot concentrate mass away from any branch.
        lower.push(hi.iter().map(|&p| (1.0 - delta_k) * p).collect());
        upper.push(lo.iter().map(|&p| p / (1.0 - delta_k)).collect());
    }
    Ok(SandwichBounds {
        depth: k,
        delta_k,
        lower,
        upper,
    })
}

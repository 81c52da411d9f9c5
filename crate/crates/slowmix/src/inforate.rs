//! Information rates of output-memory channels.
//!
//! Because the channel state is a function of past *outputs*, the mutual
//! information rate between input and output decomposes exactly into a
//! stationary mixture of single-letter terms:
//!
//! ```text
//! R_T = sum_s mu(s) R_s,   R_s = sum_a p_a sum_b theta_s(b|a)
//!                                 log2( theta_s(b|a) / q_s(b) )
//! ```
//!
//! with `q_s` the output law at state `s`.  [`state_rate`] evaluates the
//! per-state term, [`information_rate`] the mixture.
//!
//! Aggregating a channel averages kernels, and the per-state rate is convex
//! in the kernel, so aggregation can only lose rate:
//! [`aggregated_rate_bound`] reports both rates and their (nonnegative)
//! gap.  [`partial_rate`] evaluates the rate restricted to a set of
//! well-estimated states, weighting estimated kernels by estimated
//! stationary ratios; it is the quantity a slow-mixing estimator can
//! actually certify, and carries no claim of bounding the full rate.
//!
//! Logs are base 2 throughout; `0 * log(0/x)` is evaluated as `0`, so
//! estimated kernels containing exact zeros are fine.

use crate::aggregation::{aggregate_channel, AggregationError};
use crate::channel::{ChannelError, ChannelModel, InputLaw};
use crate::model::ModelError;
use crate::strings::ContextString;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Tolerance on the sum of stationary ratios handed to [`partial_rate`].
pub const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum InfoRateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("stationary ratios sum to {sum}, not one")]
    RatiosNotNormalized { sum: f64 },
    #[error("no kernel estimate for state {0}")]
    MissingEstimate(ContextString),
}

/// Per-state rates and their stationary mixture, in bits per symbol.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub per_state: BTreeMap<ContextString, f64>,
    pub total: f64,
}

/// Mutual information between an input drawn from `input` and the output of
/// the kernel `theta_s[a][b]`, in bits.  Kernels may contain zeros (the
/// `0 log 0` convention applies); the result is clamped at zero, where the
/// exact value lives.
pub fn state_rate(theta_s: &[Vec<f64>], input: &InputLaw) -> f64 {
    let width = theta_s[0].len();
    let mut q = vec![0.0f64; width];
    for (a, row) in theta_s.iter().enumerate() {
        for (b, &t) in row.iter().enumerate() {
            q[b] += input[a] * t;
        }
    }
    let mut r = 0.0;
    for (a, row) in theta_s.iter().enumerate() {
        for (b, &t) in row.iter().enumerate() {
            if t > 0.0 && input[a] > 0.0 {
                r += input[a] * t * (t / q[b]).log2();
            }
        }
    }
    r.max(0.0)
}

/// The information rate `R_T` of a channel: per-state rates mixed by the
/// stationary law of the output process.
pub fn information_rate(ch: &ChannelModel) -> Result<RateReport, InfoRateError> {
    let output = ch.output_process()?;
    let st = output.stationary()?;
    let mut per_state = BTreeMap::new();
    let mut total = 0.0;
    for (id, leaf) in ch.tree().leaves().iter().enumerate() {
        let r = state_rate(ch.theta(id), ch.input_law());
        total += st.mu[id] * r;
        per_state.insert(leaf.clone(), r);
    }
    Ok(RateReport { per_state, total })
}

/// Rates of a channel and of its depth-`k` aggregation.  Averaging kernels
/// can only lose mutual information, so `gap >= 0` up to round-off.
#[derive(Debug, Clone, Serialize)]
pub struct AggregatedRateBound {
    pub depth: usize,
    /// Rate of the aggregated channel.
    pub aggregated: f64,
    /// Rate of the original channel.
    pub total: f64,
    /// `total - aggregated`.
    pub gap: f64,
}

pub fn aggregated_rate_bound(
    ch: &ChannelModel,
    k: usize,
) -> Result<AggregatedRateBound, InfoRateError> {
    let total = information_rate(ch)?.total;
    let agg = aggregate_channel(ch, k)?;
    let mut aggregated = 0.0;
    for (w, &mass) in agg.mass.iter().enumerate() {
        aggregated += mass * state_rate(agg.channel.theta(w), ch.input_law());
    }
    Ok(AggregatedRateBound {
        depth: k,
        aggregated,
        total,
        gap: total - aggregated,
    })
}

/// Rate restricted to a good-state set: estimated kernels weighted by
/// estimated stationary ratios `mu(w) / mu(G)`, which must sum to one
/// within [`RATIO_TOL`].
pub fn partial_rate(
    estimates: &BTreeMap<ContextString, Vec<Vec<f64>>>,
    mu_ratios: &BTreeMap<ContextString, f64>,
    input: &InputLaw,
) -> Result<f64, InfoRateError> {
    let sum: f64 = mu_ratios.values().sum();
    if (sum - 1.0).abs() > RATIO_TOL {
        return Err(InfoRateError::RatiosNotNormalized { sum });
    }
    let mut r = 0.0;
    for (w, &ratio) in mu_ratios {
        let kernel = estimates
            .get(w)
            .ok_or_else(|| InfoRateError::MissingEstimate(w.clone()))?;
        r += ratio * state_rate(kernel, input);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContextTreeModel;
    use crate::strings::Alphabet;
    
    use proptest::prelude::*;

    fn uniform2() -> InputLaw {
        InputLaw::uniform(Alphabet::new(2).unwrap())
    }

    /// Independent entropy route used as the oracle: H(Y) - H(Y|X).
    fn entropy(dist: &[f64]) -> f64 {
        dist.iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum()
    }

    fn mutual_information_via_entropies(theta: &[Vec<f64>], input: &[f64]) -> f64 {
        let width = theta[0].len();
        let mut q = vec![0.0; width];
        for (a, row) in theta.iter().enumerate() {
            for (b, &t) in row.iter().enumerate() {
                q[b] += input[a] * t;
            }
        }
        entropy(&q)
            - theta
                .iter()
                .zip(input)
                .map(|(row, &p)| p * entropy(row))
                .sum::<f64>()
    }

    #[test]
    fn noiseless_channel_has_one_bit() {
        let theta = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = state_rate(&theta, &uniform2());
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn input_independent_kernel_has_zero_rate() {
        let theta = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
        assert_eq!(state_rate(&theta, &uniform2()), 0.0);
    }

    #[test]
    fn binary_symmetric_matches_entropy_route() {
        let eps = 0.11;
        let theta = vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]];
        let r = state_rate(&theta, &uniform2());
        let oracle = 1.0 - entropy(&[eps, 1.0 - eps]);
        assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
    }

    #[test]
    fn skewed_input_matches_entropy_route() {
        let input = InputLaw::new(vec![0.2, 0.8], Alphabet::new(2).unwrap()).unwrap();
        let theta = vec![vec![0.95, 0.05], vec![0.4, 0.6]];
        let r = state_rate(&theta, &input);
        let oracle = mutual_information_via_entropies(&theta, &input);
        assert!((r - oracle).abs() < 1e-12);
    }

    fn three_leaf() -> ContextTreeModel {
        ContextTreeModel::from_parts(
            2,
            &["11", "01", "0"],
            &[&[0.75, 0.25], &[2.0 / 3.0, 1.0 / 3.0], &[0.25, 0.75]],
        )
        .unwrap()
    }

    /// Channel on the three-leaf tree with one noiseless, one symmetric,
    /// and one input-independent state.
    fn mixed_channel() -> ChannelModel {
        let m = three_leaf();
        let near_identity = vec![vec![1.0 - 1e-9, 1e-9], vec![1e-9, 1.0 - 1e-9]];
        let symmetric = vec![vec![0.89, 0.11], vec![0.11, 0.89]];
        let flat = vec![vec![0.25, 0.75]; 2];
        // Canonical leaf order: 0, 01, 11.
        ChannelModel::new(
            m.tree().clone(),
            vec![flat, symmetric, near_identity],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn total_rate_is_stationary_mixture() {
        let ch = mixed_channel();
        let report = information_rate(&ch).unwrap();
        let st = ch.output_process().unwrap().stationary().unwrap();
        let recombined: f64 = ch
            .tree()
            .leaves()
            .iter()
            .enumerate()
            .map(|(id, leaf)| st.mu[id] * report.per_state[leaf])
            .sum();
        assert!((report.total - recombined).abs() < 1e-15);
        for r in report.per_state.values() {
            assert!(*r >= 0.0 && *r <= 1.0);
        }
    }

    #[test]
    fn input_independent_channel_has_zero_total() {
        let ch = ChannelModel::from_output_process(&three_leaf(), vec![0.5, 0.5]).unwrap();
        let report = information_rate(&ch).unwrap();
        assert_eq!(report.total, 0.0);
        assert!(report.per_state.values().all(|&r| r == 0.0));
    }

    #[test]
    fn aggregation_never_gains_rate() {
        let ch = mixed_channel();
        for k in [0usize, 1, 2] {
            let bound = aggregated_rate_bound(&ch, k).unwrap();
            assert!(bound.gap >= -1e-12, "k={k}: gap {}", bound.gap);
        }
        // Refinement depths: aggregation is the identity, gap vanishes.
        for k in [2usize, 3] {
            let bound = aggregated_rate_bound(&ch, k).unwrap();
            assert!(bound.gap.abs() < 1e-12, "k={k}: gap {}", bound.gap);
        }
    }

    #[test]
    fn estimated_kernels_with_zeros_are_finite() {
        let theta = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let r = state_rate(&theta, &uniform2());
        // H(Y) - H(Y|X) = H(3/4) - 1/2 = 0.31127812445913283.
        let oracle = mutual_information_via_entropies(&theta, &[0.5, 0.5]);
        assert!((r - oracle).abs() < 1e-12);
        assert!(r.is_finite() && r > 0.31 && r < 0.32);
    }

    #[test]
    fn partial_rate_over_full_set_matches_aggregated_rate() {
        let ch = mixed_channel();
        let k = 2;
        let agg = aggregate_channel(&ch, k).unwrap();
        let total_mass: f64 = agg.mass.iter().sum();
        let mut estimates = BTreeMap::new();
        let mut ratios = BTreeMap::new();
        for (w, leaf) in agg.channel.tree().leaves().iter().enumerate() {
            estimates.insert(leaf.clone(), agg.channel.theta(w).clone());
            ratios.insert(leaf.clone(), agg.mass[w] / total_mass);
        }
        let r = partial_rate(&estimates, &ratios, ch.input_law()).unwrap();
        let bound = aggregated_rate_bound(&ch, k).unwrap();
        assert!((r - bound.aggregated).abs() < 1e-12);
    }

    #[test]
    fn partial_rate_singleton_is_state_rate() {
        let ch = mixed_channel();
        let leaf: ContextString = "11".parse().unwrap();
        let id = ch.tree().leaf_id(&leaf).unwrap();
        let mut estimates = BTreeMap::new();
        estimates.insert(leaf.clone(), ch.theta(id).clone());
        let mut ratios = BTreeMap::new();
        ratios.insert(leaf.clone(), 1.0);
        let r = partial_rate(&estimates, &ratios, ch.input_law()).unwrap();
        assert!((r - state_rate(ch.theta(id), ch.input_law())).abs() < 1e-15);
    }

    #[test]
    fn partial_rate_rejects_unnormalized_ratios() {
        let ch = mixed_channel();
        let leaf: ContextString = "11".parse().unwrap();
        let mut estimates = BTreeMap::new();
        estimates.insert(leaf.clone(), ch.theta(2).clone());
        let mut ratios = BTreeMap::new();
        ratios.insert(leaf.clone(), 0.9);
        let err = partial_rate(&estimates, &ratios, ch.input_law()).unwrap_err();
        assert!(matches!(err, InfoRateError::RatiosNotNormalized { .. }));
    }

    #[test]
    fn partial_rate_requires_estimates_for_every_ratio() {
        let ch = mixed_channel();
        let mut ratios = BTreeMap::new();
        ratios.insert("11".parse().unwrap(), 1.0);
        let err = partial_rate(&BTreeMap::new(), &ratios, ch.input_law()).unwrap_err();
        assert!(matches!(err, InfoRateError::MissingEstimate(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Rate is convex in the kernel: mixing two kernels never beats the
        /// mixture of their rates.
        #[test]
        fn rate_is_convex_in_kernel(
            a0 in 0.01f64..0.99, a1 in 0.01f64..0.99,
            b0 in 0.01f64..0.99, b1 in 0.01f64..0.99,
            lambda in 0.0f64..1.0,
            p in 0.05f64..0.95,
        ) {
            let input = InputLaw::new(vec![p, 1.0 - p], Alphabet::new(2).unwrap()).unwrap();
            let t1 = vec![vec![a0, 1.0 - a0], vec![a1, 1.0 - a1]];
            let t2 = vec![vec![b0, 1.0 - b0], vec![b1, 1.0 - b1]];
            let mix: Vec<Vec<f64>> = t1
                .iter()
                .zip(&t2)
                .map(|(r1, r2)| {
                    r1.iter()
                        .zip(r2)
                        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                        .collect()
                })
                .collect();
            let lhs = state_rate(&mix, &input);
            let rhs = lambda * state_rate(&t1, &input) + (1.0 - lambda) * state_rate(&t2, &input);
            prop_assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }

        /// Per-state rates stay within [0, log |A|].
        #[test]
        fn rate_bounds(
            a0 in 0.0f64..=1.0, a1 in 0.0f64..=1.0, p in 0.05f64..0.95,
        ) {
            let input = InputLaw::new(vec![p, 1.0 - p], Alphabet::new(2).unwrap()).unwrap();
            let theta = vec![vec![a0, 1.0 - a0], vec![a1, 1.0 - a1]];
            let r = state_rate(&theta, &input);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        }
    }
}

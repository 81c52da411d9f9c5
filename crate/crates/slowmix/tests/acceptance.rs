//! End-to-end acceptance checklist.
//!
//! Nine numbered checks cover the library's contract surface: closed-form
//! stationary laws, aggregation identities, information-rate bounds, the
//! worked counting example, empirical soundness of the L1 and concentration
//! certificates, the compression inequality, coupling behavior, and the
//! direction-of-convergence checks that stand in for asymptotics.  Each test
//! prints one `[k/9] PASS` line (visible with `--nocapture`); a failed
//! assertion marks the corresponding check failed.  All randomness is
//! seeded, so outcomes are reproducible.

use slowmix::aggregation::{aggregate_channel, aggregate_process};
use slowmix::channel::{ChannelModel, InputLaw};
use slowmix::coupling::{coupled_run, maximal_step, window_length, CoupledPair, RestrictionChain};
use slowmix::ctw::{ctw_probability, redundancy_certificate};
use slowmix::decay::{DecayProfile, TailBound};
use slowmix::estimator::{
    certificate_threshold, estimate, good_states, l1_certificate, restriction_aperiodic,
    stationary_ratio_estimates, GoodSet,
};
use slowmix::fixtures;
use slowmix::inforate::{aggregated_rate_bound, information_rate, state_rate};
use slowmix::model::ContextTreeModel;
use slowmix::rng;
use slowmix::simulator::{count, simulate, Trace};
use slowmix::tree::ContextTree;
use slowmix::{Alphabet, ContextString};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

// Pinned tolerances and budgets, one place to read them all.
const TOL_STATIONARY: f64 = 1e-10;
const TOL_AGG_POINT: f64 = 1e-12;
const TOL_AGG_RANDOM: f64 = 1e-9;
const TOL_RATE: f64 = 1e-12;
const TOL_MIXTURE: f64 = 1e-10;
const RATIO_WINDOW: f64 = 0.02;
const BUDGET_STATIONARY_S: f64 = 1.0;
const BUDGET_AGGREGATION_S: f64 = 10.0;
const BUDGET_RATE_S: f64 = 30.0;
const BUDGET_L1_S: f64 = 300.0;
const BUDGET_CTW_S: f64 = 300.0;
const BUDGET_COUPLING_S: f64 = 300.0;
const BUDGET_CONCENTRATION_S: f64 = 600.0;

fn binary() -> Alphabet {
    Alphabet::new(2).unwrap()
}

fn bits(s: &str) -> ContextString {
    s.parse().unwrap()
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    rng::uniform(rng)
}

// ---------------------------------------------------------------------------
// [1/9] closed-form stationary laws
// ---------------------------------------------------------------------------

#[test]
fn stationary_closed_forms() {
    let clock = Instant::now();

    // Three-leaf tree: mu = (12, 9, 4) / 25 in leaf order (0, 01, 11).
    let m4 = fixtures::example4();
    let st = m4.stationary().unwrap();
    let want: BTreeMap<&str, f64> = [
        ("0", 12.0 / 25.0),
        ("01", 9.0 / 25.0),
        ("11", 4.0 / 25.0),
    ]
    .into_iter()
    .collect();
    for (leaf, mu) in m4.tree().leaves().iter().zip(&st.mu) {
        let w = want[leaf.to_string().as_str()];
        assert!((mu - w).abs() < TOL_STATIONARY, "{leaf}: {mu} vs {w}");
    }

    // Rare-state family: mu(0^k) = 1/(2^(k+1) - 1) at every depth up to 10,
    // independent of the escape parameter.
    for k in 1..=10usize {
        for eps in [0.1, 0.3] {
            let m = fixtures::example2(k, eps).unwrap();
            let st = m.stationary().unwrap();
            let zeros = m
                .tree()
                .leaf_id(&ContextString::from_raw(vec![0; k]))
                .unwrap();
            let closed = 1.0 / (2f64.powi(k as i32 + 1) - 1.0);
            assert!(
                (st.mu[zeros] - closed).abs() < TOL_STATIONARY,
                "k={k}, eps={eps}: {} vs {closed}",
                st.mu[zeros]
            );
        }
    }

    // Four-state chain: mu = (2-2e, 2-2e, 2-2e, 1) / (7-6e).
    for eps in [0.01, 0.1, 0.5] {
        let m = fixtures::example5(eps).unwrap();
        let st = m.stationary().unwrap();
        let closed = fixtures::example5_stationary(eps);
        for (got, want) in st.mu.iter().zip(&closed) {
            assert!((got - want).abs() < TOL_STATIONARY, "eps={eps}");
        }
    }
    // The eps = 0 limit: the closed form degenerates to (2,2,2,1)/7, and the
    // solved law is continuous in eps, so a tiny parameter must already sit
    // on the limit within tolerance.
    let limit = fixtures::example5_stationary(0.0);
    for (got, want) in limit.iter().zip([2.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
        assert!((got - want).abs() < 1e-15);
    }
    let st = fixtures::example5(1e-12).unwrap().stationary().unwrap();
    for (got, want) in st.mu.iter().zip(&limit) {
        assert!((got - want).abs() < TOL_STATIONARY, "eps->0 limit");
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_STATIONARY_S, "took {secs:.2}s");
    println!(
        "[1/9] PASS — stationary closed forms (three fixture families, tol {TOL_STATIONARY:.0e}, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [2/9] aggregation identities
// ---------------------------------------------------------------------------

/// A random full tree over `alphabet`, grown by splitting each node with
/// probability 0.55 down to `max_depth`; the root always splits.
fn random_full_tree(alphabet: Alphabet, max_depth: usize, rng: &mut ChaCha8Rng) -> ContextTree {
    fn grow(
        suffix: Vec<u8>,
        depth_left: usize,
        alphabet: Alphabet,
        rng: &mut ChaCha8Rng,
        leaves: &mut Vec<ContextString>,
    ) {
        let split = depth_left > 0 && (suffix.is_empty() || uniform01(rng) < 0.55);
        if !split {
            leaves.push(ContextString::from_raw(suffix));
            return;
        }
        for b in alphabet.symbols() {
            // Children reach one symbol further into the past.
            let mut child = Vec::with_capacity(suffix.len() + 1);
            child.push(b);
            child.extend_from_slice(&suffix);
            grow(child, depth_left - 1, alphabet, rng, leaves);
        }
    }
    let mut leaves = Vec::new();
    grow(Vec::new(), max_depth, alphabet, rng, &mut leaves);
    ContextTree::validate(alphabet, leaves).unwrap()
}

fn random_row(arity: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..arity).map(|_| 0.05 + 0.95 * uniform01(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn random_model(alphabet: Alphabet, max_depth: usize, rng: &mut ChaCha8Rng) -> ContextTreeModel {
    let tree = random_full_tree(alphabet, max_depth, rng);
    let rows = (0..tree.num_leaves())
        .map(|_| random_row(alphabet.size(), rng))
        .collect();
    ContextTreeModel::new(tree, rows).unwrap()
}

#[test]
fn aggregation_identities() {
    let clock = Instant::now();

    // Worked values: window 1 of the three-leaf tree mixes two contexts,
    // window 0 copies its single context verbatim.
    let agg = aggregate_process(&fixtures::example4(), 1).unwrap();
    assert!((agg.q_tilde(&bits("1"))[1] - 4.0 / 13.0).abs() < TOL_AGG_POINT);
    assert_eq!(agg.q_tilde(&bits("0"))[1], 0.75);

    // Random models: the lumped stationary law reproduces the aggregated
    // masses, and aggregating in two steps equals aggregating directly.
    let mut rng = rng::stream(0xA66, rng::STREAM_EXPERIMENT);
    for case in 0..200 {
        let alphabet = Alphabet::new(if case % 3 == 0 { 3 } else { 2 }).unwrap();
        let model = random_model(alphabet, 4, &mut rng);
        let k_hi = 1 + (uniform01(&mut rng) * 4.0) as usize; // 1..=4
        let k_lo = (uniform01(&mut rng) * (k_hi as f64 + 1.0)) as usize; // 0..=k_hi

        let direct = aggregate_process(&model, k_lo).unwrap();
        let diff = direct.check_stationary().unwrap();
        assert!(diff < TOL_AGG_RANDOM, "case {case}: stationary diff {diff:.2e}");

        let coarse = aggregate_process(&model, k_hi).unwrap();
        let two_step = aggregate_process(&coarse.model, k_lo).unwrap();
        for (a, b) in direct.model.rows().iter().zip(two_step.model.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < TOL_AGG_RANDOM, "case {case}: rows differ");
            }
        }
        for (a, b) in direct.mass.iter().zip(&two_step.mass) {
            assert!((a - b).abs() < TOL_AGG_RANDOM, "case {case}: masses differ");
        }
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_AGGREGATION_S, "took {secs:.2}s");
    println!(
        "[2/9] PASS — aggregation identities (worked values exact, 200 random models within {TOL_AGG_RANDOM:.0e}, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [3/9] information-rate bounds
// ---------------------------------------------------------------------------

fn random_channel(alphabet: Alphabet, max_depth: usize, rng: &mut ChaCha8Rng) -> ChannelModel {
    let tree = random_full_tree(alphabet, max_depth, rng);
    let arity = alphabet.size();
    let theta = (0..tree.num_leaves())
        .map(|_| (0..arity).map(|_| random_row(arity, rng)).collect())
        .collect();
    let input = random_row(arity, rng)
        .into_iter()
        .map(|p| 0.2 / arity as f64 + 0.8 * p)
        .collect::<Vec<_>>();
    let total: f64 = input.iter().sum();
    ChannelModel::new(tree, theta, input.into_iter().map(|p| p / total).collect()).unwrap()
}

#[test]
fn information_rate_bounds() {
    let clock = Instant::now();

    // Averaging kernels can only lose mutual information.
    let mut rng = rng::stream(0x7A7E, rng::STREAM_EXPERIMENT);
    for case in 0..500 {
        let alphabet = Alphabet::new(if case % 5 == 0 { 3 } else { 2 }).unwrap();
        let ch = random_channel(alphabet, 3, &mut rng);
        for k in [1usize, 2] {
            let bound = aggregated_rate_bound(&ch, k).unwrap();
            assert!(
                bound.gap >= -TOL_RATE,
                "case {case}, k={k}: gap {}",
                bound.gap
            );
        }
    }

    // Convexity sweep: the per-state rate of a mixed kernel never beats the
    // mixture of the rates, across a lambda grid.
    for case in 0..200 {
        let input = InputLaw::new(random_row(2, &mut rng), binary()).unwrap();
        let t1: Vec<Vec<f64>> = (0..2).map(|_| random_row(2, &mut rng)).collect();
        let t2: Vec<Vec<f64>> = (0..2).map(|_| random_row(2, &mut rng)).collect();
        let r1 = state_rate(&t1, &input);
        let r2 = state_rate(&t2, &input);
        for step in 0..=10 {
            let lambda = step as f64 / 10.0;
            let mix: Vec<Vec<f64>> = t1
                .iter()
                .zip(&t2)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                        .collect()
                })
                .collect();
            let lhs = state_rate(&mix, &input);
            let rhs = lambda * r1 + (1.0 - lambda) * r2;
            assert!(lhs <= rhs + TOL_RATE, "case {case}, lambda {lambda}");
        }
    }

    // Extremes are exact: a noiseless binary kernel carries one bit, an
    // input-independent channel zero.
    let noiseless = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert_eq!(state_rate(&noiseless, &InputLaw::uniform(binary())), 1.0);
    let flat = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
    assert_eq!(state_rate(&flat, &InputLaw::uniform(binary())), 0.0);
    let independent = fixtures::channelized(&fixtures::example4()).unwrap();
    let report = information_rate(&independent).unwrap();
    assert_eq!(report.total, 0.0);

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_RATE_S, "took {secs:.2}s");
    println!(
        "[3/9] PASS — information-rate bounds (500 aggregation gaps, 200 convexity sweeps, exact extremes, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [4/9] worked counting example
// ---------------------------------------------------------------------------

#[test]
fn worked_trace_estimates() {
    // Ten steps: inputs 1111100000, outputs 1101010100, past 00.  Window 10
    // is visited once under input 1 (emitting 1) and three times under
    // input 0 (emitting 1 twice); the estimates are the literal ratios.
    let trace = Trace::from_parts(
        binary(),
        vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
        vec![1, 1, 0, 1, 0, 1, 0, 1, 0, 0],
        bits("00"),
    );
    let counts = count(&trace, 2).unwrap();
    let est = slowmix::estimator::naive_estimates(&counts);
    let w10 = bits("10").index(binary());
    assert_eq!(est.theta(w10, 1).unwrap()[1], 1.0);
    assert_eq!(est.theta(w10, 0).unwrap()[1], 2.0 / 3.0);
    println!("[4/9] PASS — worked trace estimates (1 and 2/3, bit-exact)");
}

// ---------------------------------------------------------------------------
// [5/9] L1 certificate soundness
// ---------------------------------------------------------------------------

#[test]
fn l1_certificate_soundness() {
    let clock = Instant::now();

    // A verified member of the geometric decay class gamma = 0.3 at depth 4;
    // truth at the counting depth is the channel's own kernel table.
    let gamma = 0.3;
    let (ch, membership) = fixtures::decay_member_verified(gamma, 4, 0.05, 1).unwrap();
    assert!(membership.member);
    let d = DecayProfile::exponential(gamma).unwrap();
    let n = 100_000usize;
    let k = ((n as f64).log2() / 4.0).floor() as usize;
    assert_eq!(k, 4, "counting depth floor(log2(n)/4) at n = 1e5");
    let truth = aggregate_channel(&ch, k).unwrap();
    let past = bits("1111");

    let runs = 200u64;
    let mut violating_runs = 0u32;
    let mut cells = 0u64;
    for seed in 0..runs {
        let trace = simulate(&ch, n, &past, seed).unwrap();
        let counts = count(&trace, k).unwrap();
        let good = good_states(&counts, &d).unwrap();
        let cert = l1_certificate(binary(), counts.n, k, &d).unwrap();
        let est = slowmix::estimator::naive_estimates(&counts);
        let mut violated = false;
        for (&w, state) in good.windows().iter().zip(good.states()) {
            for a in 0..2u8 {
                let hat = est.theta(w, a).expect("good states clear every input");
                let tilde = &truth.theta_tilde(&state)[a as usize];
                let l1: f64 = hat.iter().zip(tilde).map(|(x, y)| (x - y).abs()).sum();
                let allowed = cert.refined(counts.n_w_a(w, a));
                cells += 1;
                if l1 > allowed {
                    violated = true;
                }
            }
        }
        violating_runs += u32::from(violated);
    }
    let limit = (runs as f64 * 0.05) as u32;
    assert!(
        violating_runs <= limit,
        "{violating_runs} of {runs} runs violated the certificate"
    );
    assert!(cells > 0, "no good cells were ever checked");

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_L1_S, "took {secs:.2}s");
    println!(
        "[5/9] PASS — L1 certificate soundness ({violating_runs}/{runs} violating runs over {cells} cells, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [6/9] compression certificates
// ---------------------------------------------------------------------------

/// All full binary suffix trees of depth at most `budget`, as
/// (leaves oldest-first, structure cost) pairs.  A leaf at the depth cap is
/// free; every shallower node, leaf or internal, costs one bit.
fn enumerate_trees(budget: usize) -> Vec<(Vec<Vec<u8>>, u32)> {
    if budget == 0 {
        return vec![(vec![Vec::new()], 0)];
    }
    let mut out = vec![(vec![Vec::new()], 1)];
    let children = enumerate_trees(budget - 1);
    for (left, cl) in &children {
        for (right, cr) in &children {
            let mut leaves = Vec::with_capacity(left.len() + right.len());
            // The branch symbol is the most recent context symbol; the
            // subtree's relative leaves describe older ones, so the branch
            // symbol lands at the end of the oldest-first leaf string.
            for (b, side) in [(0u8, left), (1u8, right)] {
                for leaf in side {
                    let mut s = Vec::with_capacity(leaf.len() + 1);
                    s.extend_from_slice(leaf);
                    s.push(b);
                    leaves.push(s);
                }
            }
            out.push((leaves, 1 + cl + cr));
        }
    }
    out
}

/// Conditioned block probability of a trace under one fixed tree: an
/// add-half estimator per (leaf, input), applied sequentially.
fn tree_log2_likelihood(trace: &Trace, leaves: &[Vec<u8>]) -> f64 {
    let hist: Vec<u8> = trace
        .past
        .symbols()
        .iter()
        .copied()
        .chain(trace.y.iter().copied())
        .collect();
    let offset = trace.past.len();
    let mut log2 = 0.0;
    for (leaf_idx, leaf) in leaves.iter().enumerate() {
        for a in 0..2u8 {
            let mut counts = [0.0f64; 2];
            for t in 0..trace.len() {
                if trace.x[t] != a {
                    continue;
                }
                let ctx = &hist[offset + t - leaf.len()..offset + t];
                if ctx != leaf.as_slice() {
                    continue;
                }
                let total = counts[0] + counts[1];
                let b = trace.y[t] as usize;
                log2 += ((counts[b] + 0.5) / (total + 1.0)).log2();
                counts[b] += 1.0;
            }
        }
        let _ = leaf_idx;
    }
    log2
}

/// The Bayes mixture over all depth-limited trees with prior 2^(-cost).
fn exhaustive_mixture_log2(trace: &Trace, budget: usize) -> f64 {
    let terms: Vec<f64> = enumerate_trees(budget)
        .iter()
        .map(|(leaves, cost)| tree_log2_likelihood(trace, leaves) - *cost as f64)
        .collect();
    let hi = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi + terms.iter().map(|t| (t - hi).exp2()).sum::<f64>().log2()
}

fn random_trace(n: usize, k_past: usize, rng: &mut ChaCha8Rng) -> Trace {
    let skew = 0.1 + 0.8 * uniform01(rng);
    let input_skew = 0.1 + 0.8 * uniform01(rng);
    let draw = |p: f64, rng: &mut ChaCha8Rng| u8::from(uniform01(rng) < p);
    let past = ContextString::from_raw((0..k_past).map(|_| draw(0.5, rng)).collect());
    let x: Vec<u8> = (0..n).map(|_| draw(input_skew, rng)).collect();
    let y: Vec<u8> = (0..n).map(|_| draw(skew, rng)).collect();
    Trace::from_parts(binary(), x, y, past)
}

#[test]
fn compression_certificates() {
    let clock = Instant::now();

    // A mixture code can undershoot the best tree fit by at most the
    // structure budget: slack stays nonnegative on a thousand traces.
    let mut rng = rng::stream(0xC7, rng::STREAM_EXPERIMENT);
    let channel = fixtures::channelized(&fixtures::example5(0.3).unwrap()).unwrap();
    let mut min_slack = f64::INFINITY;
    for case in 0..1000u64 {
        let n = 2 + (uniform01(&mut rng) * 9_998.0) as usize;
        let k = (uniform01(&mut rng) * 4.0) as usize; // 0..=3
        let trace = if case % 4 == 0 {
            simulate(&channel, n, &bits("1111"), case).unwrap()
        } else {
            random_trace(n, 4, &mut rng)
        };
        let cert = redundancy_certificate(&trace, k).unwrap();
        assert!(
            cert.slack >= 0.0,
            "case {case}: slack {} at n={n}, k={k}",
            cert.slack
        );
        min_slack = min_slack.min(cert.slack);
    }

    // Exhaustive equivalence: the sequential assignment is exactly the
    // Bayes mixture over depth-limited trees on small traces.
    let mut worst = 0.0f64;
    for case in 0..60u64 {
        let n = 1 + (uniform01(&mut rng) * 12.0) as usize;
        let k = (uniform01(&mut rng) * 3.0) as usize; // 0..=2
        let trace = random_trace(n.min(12), 2, &mut rng);
        let got = ctw_probability(&trace, k).unwrap();
        let want = exhaustive_mixture_log2(&trace, k);
        let diff = (got - want).abs();
        worst = worst.max(diff);
        assert!(diff < TOL_MIXTURE, "case {case}: {got} vs {want}");
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_CTW_S, "took {secs:.2}s");
    println!(
        "[6/9] PASS — compression certificates (min slack {min_slack:.3} bits over 1000 traces; mixture match worst {worst:.2e}, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [7/9] coupling behavior
// ---------------------------------------------------------------------------

fn padded_start(context: &str, len: usize) -> ContextString {
    let ctx = bits(context);
    let mut symbols = vec![1u8; len - ctx.len()];
    symbols.extend_from_slice(ctx.symbols());
    ContextString::from_raw(symbols)
}

#[test]
fn coupling_behaviors() {
    let clock = Instant::now();

    // Joint draws match exactly as often as the overlap of the two laws,
    // whatever the shared good exits (here only symbol 0).
    let q_u = [0.7, 0.3];
    let q_v = [0.4, 0.6];
    let overlap = 0.7;
    let mut rng = rng::stream(0xC0, rng::STREAM_COUPLING_SHARED);
    let draws = 1_000_000u64;
    let mut matches = 0u64;
    for _ in 0..draws {
        let (b1, b2) = maximal_step(&q_u, &q_v, &[0], &[0, 1], uniform01(&mut rng));
        matches += u64::from(b1 == b2);
    }
    let freq = matches as f64 / draws as f64;
    let sigma = (overlap * (1.0 - overlap) / draws as f64).sqrt();
    assert!(
        (freq - overlap).abs() <= 3.0 * sigma,
        "match frequency {freq} vs {overlap}"
    );

    // The two-state restriction of the alternating fixture has period two.
    let periodic = GoodSet::from_states(binary(), 2, &[bits("01"), bits("10")]).unwrap();
    assert!(!restriction_aperiodic(&periodic).unwrap());

    // One coupled step from the tightest pair of good contexts produces the
    // matched jump with probability eta — here exactly the overlap of the
    // laws at 11 and 10 over their common good exit.
    let eps = 0.2;
    let model = fixtures::example5(eps).unwrap();
    let good = GoodSet::from_states(binary(), 2, &[bits("01"), bits("10"), bits("11")]).unwrap();
    let agg = aggregate_process(&model, 2).unwrap();
    let mut laws = BTreeMap::new();
    for s in good.states() {
        laws.insert(s.clone(), agg.q_tilde(&s).to_vec());
    }
    let eta = slowmix::estimator::eta(&laws, &good).unwrap();
    assert!((eta - eps).abs() < 1e-12);
    let len = window_length(2, 2, 2);
    let runs = 30_000u64;
    let mut matched = 0u64;
    for seed in 0..runs {
        let left = RestrictionChain::new(&model, &good, &padded_start("11", len), len, 100_000)
            .unwrap();
        let right = RestrictionChain::new(&model, &good, &padded_start("10", len), len, 100_000)
            .unwrap();
        let mut pair = CoupledPair::new(left, right, 2, seed).unwrap();
        matched += u64::from(pair.coupled_step().unwrap().matched);
    }
    let matched_freq = matched as f64 / runs as f64;
    let sigma_eta = (eta * (1.0 - eta) / runs as f64).sqrt();
    assert!(
        (matched_freq - eta).abs() <= 3.0 * sigma_eta,
        "matched {matched_freq} vs eta {eta}"
    );

    // Once coalesced to the model depth, the dependency tail is zero, so
    // the empirical divergence count must match its bound of zero exactly.
    let mut divergences = 0u64;
    let mut coalesced = 0u32;
    for seed in 0..50u64 {
        let left = RestrictionChain::new(&model, &good, &padded_start("11", len), len, 100_000)
            .unwrap();
        let right = RestrictionChain::new(&model, &good, &padded_start("10", len), len, 100_000)
            .unwrap();
        let mut pair = CoupledPair::new(left, right, 2, seed).unwrap();
        let run = coupled_run(&mut pair, 500).unwrap();
        if run.coalescence.tau.is_some() {
            coalesced += 1;
            divergences += run.coalescence.divergences_after;
        }
    }
    assert_eq!(divergences, 0);
    assert_eq!(coalesced, 50, "all runs should coalesce within the horizon");

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_COUPLING_S, "took {secs:.2}s");
    println!(
        "[7/9] PASS — coupling behavior (overlap {freq:.4}~{overlap}, restricted period 2, matched {matched_freq:.4}~eta {eta}, 0 divergences, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [8/9] occupancy concentration and the slow regime
// ---------------------------------------------------------------------------

/// Dependency profile of the four-state chain: flipping the older window
/// symbol changes conditional ratios by up to (1-2e)/e, resolving entirely
/// at distance two.
fn example5_profile(eps: f64) -> DecayProfile {
    DecayProfile::table(vec![(1.0 - 2.0 * eps) / eps, 0.0], TailBound::Zero).unwrap()
}

#[test]
fn count_concentration() {
    let clock = Instant::now();

    // Moderate regime: every state is well sampled; occupancy counts stay
    // within the certified deviation radius at residual confidence 0.05.
    let eps = 0.2;
    let channel = fixtures::channelized(&fixtures::example5(eps).unwrap()).unwrap();
    let d = example5_profile(eps);
    let input = InputLaw::uniform(binary());
    let mu = fixtures::example5_stationary(eps);
    let n = 100_000usize;
    let runs = 400u64;
    let mut held = 0u32;
    for seed in 0..runs {
        let trace = simulate(&channel, n, &bits("11"), seed).unwrap();
        let counts = count(&trace, 2).unwrap();
        let report = estimate(&counts, &d, &input).unwrap();
        let t = certificate_threshold(report.n_tilde, report.b, 0.05);
        let mu_good: f64 = report
            .good
            .windows()
            .iter()
            .map(|&w| mu[w])
            .sum();
        let ok = report.good.windows().iter().all(|&w| {
            let center = report.n_tilde as f64 * mu[w] / mu_good;
            (counts.n_w(w) as f64 - center).abs() <= t
        });
        held += u32::from(ok);
    }
    assert!(
        held >= (runs as f64 * 0.95) as u32,
        "certificate held in only {held}/{runs} runs"
    );

    // Slow regime: with a vanishing escape rate the raw symbol frequencies
    // sit far from the stationary law, while the occupancy ratios over the
    // certified states land on the restricted limit law.
    let eps_slow = 1e-9;
    let slow = fixtures::channelized(&fixtures::example5(eps_slow).unwrap()).unwrap();
    let d_slow = example5_profile(eps_slow);
    let trace = simulate(&slow, n, &bits("11"), 20_260_814).unwrap();
    let counts = count(&trace, 2).unwrap();
    let good = good_states(&counts, &d_slow).unwrap();
    let states: Vec<String> = good.states().iter().map(ToString::to_string).collect();
    assert_eq!(states, ["01", "10", "11"], "frozen state is uncertified");
    let ratios = stationary_ratio_estimates(&counts, &good).unwrap();
    let limit = fixtures::example5_restricted_limit();
    for (state, want) in ["01", "10", "11"].iter().zip(&limit) {
        let got = ratios.ratios[&bits(state)];
        assert!(
            (got - want).abs() <= RATIO_WINDOW,
            "{state}: ratio {got} vs restricted {want}"
        );
    }
    // Raw frequency of ones concentrates on the restricted prediction 0.6
    // and misses the stationary value 3/7 by a wide margin.
    let ones = trace.y.iter().filter(|&&b| b == 1).count() as f64 / n as f64;
    assert!((ones - 0.6).abs() <= RATIO_WINDOW, "ones frequency {ones}");
    assert!(
        (ones - 3.0 / 7.0).abs() > 0.1,
        "ones frequency {ones} should miss the stationary marginal"
    );

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < BUDGET_CONCENTRATION_S, "took {secs:.2}s");
    println!(
        "[8/9] PASS — occupancy concentration ({held}/{runs} certified runs; slow-regime ratios within {RATIO_WINDOW}, {secs:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// [9/9] convergence directions at desk scale
// ---------------------------------------------------------------------------

#[test]
fn asymptotic_coverage() {
    // Headline limit theorems are not observable at desk scale; the bound
    // and oracle suites above substitute for them.  This check pins the
    // direction of every rate: certificates tighten as data grows.
    let d = DecayProfile::exponential(0.4).unwrap();

    // Per-sample deviation radius of the occupancy certificate shrinks.
    let radius = |n: u64| certificate_threshold(n, 9.0, 0.05) / n as f64;
    assert!(radius(10_000) > radius(1_000_000));
    assert!(radius(1_000_000) > radius(100_000_000));

    // The L1 bound decreases in n at fixed depth.
    let l1 = |n: u64| l1_certificate(binary(), n, 3, &d).unwrap().bound;
    assert!(l1(1_000) > l1(1_000_000));
    assert!(l1(1_000_000) > l1(1_000_000_000));

    // The compression budget per symbol vanishes.
    let per_symbol = |n: u64| (2f64).powi(3) * (n as f64).log2() / n as f64;
    assert!(per_symbol(1_000) > per_symbol(1_000_000));

    // The coalescence horizon grows only logarithmically slowly: doubling n
    // adds at most a bounded number of levels.
    let ell = |n: u64| d.coalescence_horizon(n).unwrap();
    assert!(ell(1 << 20) <= ell(1 << 10) + 10);

    println!(
        "[9/9] PASS — asymptotic coverage (certificate radii, L1 bounds, and budgets all tighten with n)"
    );
}

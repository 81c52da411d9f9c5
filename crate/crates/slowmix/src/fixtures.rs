//! Built-in models and channels with closed-form ground truth.
//!
//! Each fixture ships with independently derived stationary laws or
//! structural properties, so solvers, estimators and Monte Carlo runs can
//! be checked against exact values:
//!
//! * `example2(k, eps)` — depth-`k` binary tree with one nearly absorbing
//!   all-zeros state; stationary law `1/(2^(k+1)-1)` there and
//!   `2/(2^(k+1)-1)` elsewhere, independent of `eps`.  With `k` well above
//!   `log n`, samples are indistinguishable from fair coin flips.
//! * `example3a(eps)` / `example3b(eps)` — two-state switches with flip
//!   probabilities (`eps`, `eps`) resp. (`eps`, `2 eps`); stationary laws
//!   `(1/2, 1/2)` and `(1/3, 2/3)` for every `eps > 0`.  For `eps` far
//!   below `1/n` their samples look identical, so no estimator can recover
//!   either stationary law.
//! * `example4` — the three-leaf tree `{11, 01, 0}` with
//!   `q(1) = (1/4, 1/3, 3/4)`; stationary law `(4/25, 9/25, 12/25)` and
//!   depth-1 aggregate `q~_1(1) = 4/13`.
//! * `example5(eps)` — four-state chain whose `00` state is entered at rate
//!   `eps`; stationary law `(2-2eps, 2-2eps, 2-2eps, 1) / (7-6eps)` over
//!   `(00, 01, 10, 11)`.  For `eps` far below `1/n` the chain lives on
//!   `{01, 10, 11}` and only ratios over that set are estimable.
//! * `slowswitch(eps)` — input-independent two-state channel; a member of
//!   the identically-zero decay profile however slowly it mixes.
//! * `periodic-pair(eps)` — aperiodic four-state chain whose restriction
//!   to `{01, 10}` is periodic with period 2.
//! * `decay-member(gamma, depth, c, seed)` — a randomized complete-tree
//!   channel built to satisfy the exponential decay profile `d(i) =
//!   gamma^i` by construction, with strongly skewed output marginals so
//!   that only the heavy windows become good states at moderate `n`.

use crate::channel::{ChannelError, ChannelModel, MembershipReport};
use crate::decay::DecayProfile;
use crate::model::{ContextTreeModel, ModelError};
use crate::rng;
use crate::strings::Alphabet;
use crate::tree::ContextTree;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("bad fixture parameter `{name}`: {reason}")]
    BadParameter { name: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

fn binary() -> Alphabet {
    Alphabet::new(2).unwrap()
}

/// RNG stream used when generating randomized fixture parameters.
const STREAM_FIXTURE: u64 = 7;

// ---------------------------------------------------------------------------
// Models with closed-form stationary laws

/// Three-leaf tree `{11, 01, 0}` with `q(1) = (1/4, 1/3, 3/4)`.
pub fn example4() -> ContextTreeModel {
    ContextTreeModel::from_parts(
        2,
        &["11", "01", "0"],
        &[&[0.75, 0.25], &[2.0 / 3.0, 1.0 / 3.0], &[0.25, 0.75]],
    )
    .expect("fixture parameters are valid")
}

/// Closed-form stationary law of [`example4`], in canonical leaf order
/// `(0, 01, 11)`.
pub fn example4_stationary() -> Vec<f64> {
    vec![12.0 / 25.0, 9.0 / 25.0, 4.0 / 25.0]
}

/// Complete depth-`k` binary tree: `q_{0^k}(1) = 2 eps`,
/// `q_{1 0^(k-1)}(1) = 1 - eps`, all other states fair.
pub fn example2(k: usize, eps: f64) -> Result<ContextTreeModel, FixtureError> {
    check_eps(eps, 0.5)?;
    if k == 0 {
        return Err(FixtureError::BadParameter {
            name: "k".into(),
            reason: "depth must be at least 1".into(),
        });
    }
    let a = binary();
    let tree = ContextTree::complete(a, k).map_err(ModelError::from)?;
    let all_zeros = 0usize;
    // `1 0^(k-1)` has the single 1 in the oldest slot.
    let one_then_zeros = 1usize << (k - 1);
    let rows = (0..tree.num_leaves())
        .map(|w| {
            let p1 = if w == all_zeros {
                2.0 * eps
            } else if w == one_then_zeros {
                1.0 - eps
            } else {
                0.5
            };
            vec![1.0 - p1, p1]
        })
        .collect();
    Ok(ContextTreeModel::new(tree, rows)?)
}

/// Closed-form stationary law of [`example2`]: `1/(2^(k+1)-1)` at the
/// all-zeros state, `2/(2^(k+1)-1)` everywhere else (independent of `eps`).
pub fn example2_stationary(k: usize) -> Vec<f64> {
    let denom = (2u64.pow(k as u32 + 1) - 1) as f64;
    (0..1usize << k)
        .map(|w| if w == 0 { 1.0 / denom } else { 2.0 / denom })
        .collect()
}

/// Two-state switch: `q_1(1) = 1 - eps`, `q_0(1) = eps`.
pub fn example3a(eps: f64) -> Result<ContextTreeModel, FixtureError> {
    check_eps(eps, 1.0)?;
    Ok(ContextTreeModel::from_parts(
        2,
        &["0", "1"],
        &[&[1.0 - eps, eps], &[eps, 1.0 - eps]],
    )?)
}

/// Stationary law of [`example3a`]: `(1/2, 1/2)` for every `eps > 0`.
pub fn example3a_stationary() -> Vec<f64> {
    vec![0.5, 0.5]
}

/// Two-state switch with asymmetric escape: `q_1(1) = 1 - eps`,
/// `q_0(1) = 2 eps`.
pub fn example3b(eps: f64) -> Result<ContextTreeModel, FixtureError> {
    check_eps(eps, 0.5)?;
    Ok(ContextTreeModel::from_parts(
        2,
        &["0", "1"],
        &[&[1.0 - 2.0 * eps, 2.0 * eps], &[eps, 1.0 - eps]],
    )?)
}

/// Stationary law of [`example3b`]: `(1/3, 2/3)` for every `eps > 0`.
pub fn example3b_stationary() -> Vec<f64> {
    vec![1.0 / 3.0, 2.0 / 3.0]
}

/// Four-state chain over `{00, 01, 10, 11}` with `q_11(1) = eps`,
/// `q_01(1) = 1/2`, `q_10(1) = 1 - eps`, `q_00(1) = eps`.
pub fn example5(eps: f64) -> Result<ContextTreeModel, FixtureError> {
    check_eps(eps, 1.0)?;
    Ok(ContextTreeModel::from_parts(
        2,
        &["00", "01", "10", "11"],
        &[
            &[1.0 - eps, eps],
            &[0.5, 0.5],
            &[eps, 1.0 - eps],
            &[1.0 - eps, eps],
        ],
    )?)
}

/// Closed-form stationary law of [`example5`] in canonical order
/// `(00, 01, 10, 11)`: `(2-2eps, 2-2eps, 2-2eps, 1) / (7-6eps)`.  Defined
/// for `eps = 0` as well (the limit law of the reducible chain).
pub fn example5_stationary(eps: f64) -> Vec<f64> {
    let denom = 7.0 - 6.0 * eps;
    vec![
        (2.0 - 2.0 * eps) / denom,
        (2.0 - 2.0 * eps) / denom,
        (2.0 - 2.0 * eps) / denom,
        1.0 / denom,
    ]
}

/// Stationary law of the `eps = 0` limit of [`example5`] restricted to the
/// surviving states, canonical order `(01, 10, 11)`: `(2/5, 2/5, 1/5)`.
pub fn example5_restricted_limit() -> Vec<f64> {
    vec![0.4, 0.4, 0.2]
}

/// Aperiodic four-state chain (`q_11(1) = q_00(1) = 1/2`,
/// `q_01(1) = eps`, `q_10(1) = 1 - eps`) whose restriction to `{01, 10}`
/// alternates deterministically: the restricted process has period 2.
pub fn periodic_pair(eps: f64) -> Result<ContextTreeModel, FixtureError> {
    check_eps(eps, 1.0)?;
    Ok(ContextTreeModel::from_parts(
        2,
        &["00", "01", "10", "11"],
        &[
            &[0.5, 0.5],
            &[1.0 - eps, eps],
            &[eps, 1.0 - eps],
            &[0.5, 0.5],
        ],
    )?)
}

// ---------------------------------------------------------------------------
// Channels

/// Input-independent two-state channel: `theta_1(1|a) = 1 - eps`,
/// `theta_0(1|a) = eps`, uniform inputs.  Its output process is
/// [`example3a`]; it belongs to the identically-zero decay profile for
/// every `eps`, however slowly it mixes.
pub fn slowswitch(eps: f64) -> Result<ChannelModel, FixtureError> {
    Ok(ChannelModel::from_output_process(
        &example3a(eps)?,
        vec![0.5, 0.5],
    )?)
}

/// Wrap a model as an input-independent channel with uniform inputs.
pub fn channelized(model: &ContextTreeModel) -> Result<ChannelModel, FixtureError> {
    let arity = model.alphabet().size();
    Ok(ChannelModel::from_output_process(
        model,
        vec![1.0 / arity as f64; arity],
    )?)
}

/// A complete-tree binary channel constructed to satisfy the exponential
/// decay profile `d(i) = gamma^i`.
///
/// Base kernels `theta*(1|a) = (0.75, 0.85)` are modulated per leaf by
/// factors `1 + c gamma^i xi` for each lag `i`, with `xi` drawn uniformly
/// from `[-1, 1]` per (recent-suffix, lag) — so leaves sharing their `i`
/// most recent symbols share all factors up to lag `i`, and kernel ratios
/// across deeper disagreements decay geometrically.  With `c` small the
/// ratio deviations (including the odds-amplified ones on the rare output)
/// stay below `gamma^i`; [`decay_member_verified`] checks this and should
/// be preferred when a certified member is required.
///
/// The skewed base makes the output roughly Bernoulli(0.8), so the heavy
/// all-ones window carries mass about `0.8^depth` while the all-zeros
/// window is exponentially light — a natural testbed for partial good-state
/// estimation.
pub fn decay_member(
    gamma: f64,
    depth: usize,
    c: f64,
    seed: u64,
) -> Result<ChannelModel, FixtureError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(FixtureError::BadParameter {
            name: "gamma".into(),
            reason: format!("{gamma} outside (0, 1)"),
        });
    }
    if !(c >= 0.0 && c < 0.5) {
        return Err(FixtureError::BadParameter {
            name: "c".into(),
            reason: format!("{c} outside [0, 0.5)"),
        });
    }
    if depth == 0 || depth > 8 {
        return Err(FixtureError::BadParameter {
            name: "depth".into(),
            reason: format!("{depth} outside 1..=8"),
        });
    }
    let a = binary();
    let tree = ContextTree::complete(a, depth).map_err(ModelError::from)?;
    let base = [0.75f64, 0.85];
    // One modulation factor per (lag, suffix of that length, input): leaves
    // sharing their `i` most recent symbols must share the lag-`i` factor.
    let mut rng = rng::stream(seed, STREAM_FIXTURE);
    let mut xi = Vec::with_capacity(depth + 1);
    xi.push(Vec::new());
    for i in 1..=depth {
        let n = 1usize << i;
        let mut per_suffix = Vec::with_capacity(n);
        for _ in 0..n {
            per_suffix.push([
                2.0 * rng::uniform(&mut rng) - 1.0,
                2.0 * rng::uniform(&mut rng) - 1.0,
            ]);
        }
        xi.push(per_suffix);
    }
    let mut theta = Vec::with_capacity(tree.num_leaves());
    for w in 0..tree.num_leaves() {
        let mut kernels = Vec::with_capacity(2);
        for (input, &p1) in base.iter().enumerate() {
            let mut factor = 1.0;
            for i in 1..=depth {
                let suffix = w % (1usize << i);
                factor *= 1.0 + c * gamma.powi(i as i32) * xi[i][suffix][input];
            }
            let p = p1 * factor;
            kernels.push(vec![1.0 - p, p]);
        }
        theta.push(kernels);
    }
    Ok(ChannelModel::new(tree, theta, vec![0.5, 0.5])?)
}

/// [`decay_member`] plus a programmatic membership check against
/// `d(i) = gamma^i`; returns the channel and the verification report.
pub fn decay_member_verified(
    gamma: f64,
    depth: usize,
    c: f64,
    seed: u64,
) -> Result<(ChannelModel, MembershipReport), FixtureError> {
    let ch = decay_member(gamma, depth, c, seed)?;
    let d = DecayProfile::exponential(gamma).expect("gamma validated");
    let report = ch.verify_membership(&d, depth + 2)?;
    if !report.member {
        return Err(FixtureError::BadParameter {
            name: "c".into(),
            reason: format!(
                "modulation too strong for the declared profile: {:?}",
                report.worst
            ),
        });
    }
    Ok((ch, report))
}

fn check_eps(eps: f64, upper: f64) -> Result<(), FixtureError> {
    if !(eps > 0.0 && eps < upper) {
        return Err(FixtureError::BadParameter {
            name: "eps".into(),
            reason: format!("{eps} outside (0, {upper})"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Name-based lookup (CLI surface)

/// A fixture instance: either a bare output process or a full channel.
#[derive(Debug, Clone)]
pub enum Fixture {
    Model(ContextTreeModel),
    Channel(ChannelModel),
}

impl Fixture {
    /// View as a channel, wrapping bare models with an input-independent
    /// uniform-input channel.
    pub fn into_channel(self) -> Result<ChannelModel, FixtureError> {
        match self {
            Fixture::Channel(ch) => Ok(ch),
            Fixture::Model(m) => channelized(&m),
        }
    }

    /// The output process of the fixture.
    pub fn output_model(&self) -> Result<ContextTreeModel, FixtureError> {
        match self {
            Fixture::Model(m) => Ok(m.clone()),
            Fixture::Channel(ch) => Ok((*ch.output_process()?).clone()),
        }
    }
}

/// Catalog row describing one built-in fixture.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FixtureInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub params: &'static str,
    pub description: &'static str,
}

pub fn catalog() -> Vec<FixtureInfo> {
    vec![
        FixtureInfo {
            name: "example1",
            kind: "model",
            params: "",
            description: "three-leaf tree {11,01,0}; same process as example4, of which it demos the complete-tree reparameterization",
        },
        FixtureInfo {
            name: "example2",
            kind: "model",
            params: "k=2, eps=0.1",
            description: "depth-k tree hiding one rare state; uniform-looking output",
        },
        FixtureInfo {
            name: "example3a",
            kind: "model",
            params: "eps=0.1",
            description: "symmetric two-state switch, stationary (1/2, 1/2)",
        },
        FixtureInfo {
            name: "example3a-slow",
            kind: "model",
            params: "",
            description: "example3a at eps=1e-12: states freeze for any feasible n",
        },
        FixtureInfo {
            name: "example3b",
            kind: "model",
            params: "eps=0.1",
            description: "asymmetric two-state switch, stationary (1/3, 2/3)",
        },
        FixtureInfo {
            name: "example4",
            kind: "model",
            params: "",
            description: "three-leaf tree {11,01,0}, stationary (4/25, 9/25, 12/25)",
        },
        FixtureInfo {
            name: "example5",
            kind: "model",
            params: "eps=0.1",
            description: "four-state chain with rarely-entered 00 state",
        },
        FixtureInfo {
            name: "slowswitch",
            kind: "channel",
            params: "eps=0.1",
            description: "two-state channel in the zero-decay class at every eps",
        },
        FixtureInfo {
            name: "periodic-pair",
            kind: "model",
            params: "eps=0.1",
            description: "aperiodic chain whose {01,10} restriction has period 2",
        },
        FixtureInfo {
            name: "decay-member",
            kind: "channel",
            params: "gamma=0.3, depth=4, c=0.05, seed=1",
            description: "randomized complete-tree channel obeying d(i)=gamma^i",
        },
    ]
}

/// Parse `name` or `name(key=value, ...)` into a fixture instance.
pub fn fixture_by_name(spec: &str) -> Result<Fixture, FixtureError> {
    let spec = spec.trim();
    let (name, args) = match spec.find('(') {
        Some(open) => {
            let close = spec.rfind(')').ok_or_else(|| FixtureError::BadParameter {
                name: spec.to_string(),
                reason: "unbalanced parentheses".into(),
            })?;
            (&spec[..open], parse_args(&spec[open + 1..close])?)
        }
        None => (spec, Vec::new()),
    };
    let get = |key: &str, default: f64| -> Result<f64, FixtureError> {
        for (k, v) in &args {
            if k == key {
                return Ok(*v);
            }
            if !["eps", "k", "gamma", "depth", "c", "seed"].contains(&k.as_str()) {
                return Err(FixtureError::BadParameter {
                    name: k.clone(),
                    reason: "unknown parameter".into(),
                });
            }
        }
        Ok(default)
    };
    match name {
        "example1" => Ok(Fixture::Model(example4())),
        "example2" => Ok(Fixture::Model(example2(
            get("k", 2.0)? as usize,
            get("eps", 0.1)?,
        )?)),
        "example3a" => Ok(Fixture::Model(example3a(get("eps", 0.1)?)?)),
        "example3a-slow" => Ok(Fixture::Model(example3a(1e-12)?)),
        "example3b" => Ok(Fixture::Model(example3b(get("eps", 0.1)?)?)),
        "example4" => Ok(Fixture::Model(example4())),
        "example5" => Ok(Fixture::Model(example5(get("eps", 0.1)?)?)),
        "slowswitch" => Ok(Fixture::Channel(slowswitch(get("eps", 0.1)?)?)),
        "periodic-pair" => Ok(Fixture::Model(periodic_pair(get("eps", 0.1)?)?)),
        "decay-member" => Ok(Fixture::Channel(decay_member(
            get("gamma", 0.3)?,
            get("depth", 4.0)? as usize,
            get("c", 0.05)?,
            get("seed", 1.0)? as u64,
        )?)),
        other => Err(FixtureError::UnknownFixture(other.to_string())),
    }
}

fn parse_args(body: &str) -> Result<Vec<(String, f64)>, FixtureError> {
    let mut out = Vec::new();
    for part in body.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part.split_once('=').ok_or_else(|| FixtureError::BadParameter {
            name: part.to_string(),
            reason: "expected key=value".into(),
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|e| FixtureError::BadParameter {
                name: key.trim().to_string(),
                reason: format!("{e}"),
            })?;
        out.push((key.trim().to_string(), v));
    }
    Ok(out)
}

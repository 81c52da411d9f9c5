//! Command implementations: source loading, parameter resolution, report
//! envelopes, and CSV emission.

use crate::{DepthArgs, SourceArgs};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use slowmix::aggregation::{aggregate_channel, aggregate_process, AggregationError};
use slowmix::channel::ChannelError;
use slowmix::coupling::{
    coupled_run, window_length, CoupledPair, CouplingError, RestrictionChain,
    DEFAULT_EXCURSION_CAP,
};
use slowmix::ctw::{redundancy_certificate, CtwError};
use slowmix::decay::{DecayError, DecayProfile, TailBound};
use slowmix::estimator::{
    certificate_threshold, estimate, good_states, restriction_aperiodic, EstimationReport,
    EstimatorError, GoodSet,
};
use slowmix::fixtures::{catalog, fixture_by_name, Fixture, FixtureError};
use slowmix::inforate::{aggregated_rate_bound, information_rate, InfoRateError};
use slowmix::model::{ContextTreeModel, ModelError};
use slowmix::simulator::{count, simulate, SampleCounts, SimulatorError, Trace};
use slowmix::strings::StringError;
use slowmix::{Alphabet, ContextString};
use std::fs;
use std::path::{Path, PathBuf};

/// Residual confidence used for the reported concentration threshold.
const CERT_CONFIDENCE: f64 = 0.05;
/// Cap on the default coalescence depth so window lengths stay bounded.
const MAX_ELL: usize = 64;
const DEFAULT_HORIZON: usize = 1000;

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// A failed invocation, already classified for the exit code: 2 for
/// configuration problems, 3 for numeric/model failures, 4 when a
/// certificate is unavailable (empty good set, zero overlap, periodic
/// restriction, too-heavy decay tail).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Certificate(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Certificate(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Certificate(_) => "certificate",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Certificate(m) => m,
        }
    }

    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "code": self.code(),
                "kind": self.kind(),
                "message": self.message(),
            }
        })
        .to_string()
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<InfoRateError> for CliError {
    fn from(e: InfoRateError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Certificate(e.to_string())
    }
}
impl From<DecayError> for CliError {
    fn from(e: DecayError) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<StringError> for CliError {
    fn from(e: StringError) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<CtwError> for CliError {
    fn from(e: CtwError) -> Self {
        match e {
            CtwError::PastTooShort { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
impl From<CouplingError> for CliError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::Model(m) => m.into(),
            CouplingError::Estimator(s) => s.into(),
            CouplingError::ExcursionCap { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Source loading and provenance
// ---------------------------------------------------------------------------

/// Where the model came from, embedded in every report.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum Provenance {
    Builtin {
        name: String,
        kind: &'static str,
    },
    File {
        path: String,
        sha256: String,
        kind: &'static str,
    },
}

fn kind_of(fixture: &Fixture) -> &'static str {
    match fixture {
        Fixture::Model(_) => "model",
        Fixture::Channel(_) => "channel",
    }
}

fn load_source(src: &SourceArgs) -> Result<(Fixture, Provenance), CliError> {
    match (&src.fixture, &src.model) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "pass --fixture or --model, not both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "a source is required: --fixture NAME or --model PATH".into(),
        )),
        (Some(name), None) => {
            let fixture = fixture_by_name(name)?;
            let kind = kind_of(&fixture);
            Ok((
                fixture,
                Provenance::Builtin {
                    name: name.clone(),
                    kind,
                },
            ))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let sha256 = hex256(text.as_bytes());
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: not JSON: {e}", path.display())))?;
            let fixture = match serde_json::from_value::<slowmix::channel::ChannelModel>(
                value.clone(),
            ) {
                Ok(ch) => Fixture::Channel(ch),
                Err(channel_err) => match serde_json::from_value::<ContextTreeModel>(value) {
                    Ok(m) => Fixture::Model(m),
                    Err(model_err) => {
                        return Err(CliError::Numeric(format!(
                            "{}: neither a channel ({channel_err}) nor a model ({model_err})",
                            path.display()
                        )))
                    }
                },
            };
            let kind = kind_of(&fixture);
            Ok((
                fixture,
                Provenance::File {
                    path: path.display().to_string(),
                    sha256,
                    kind,
                },
            ))
        }
    }
}

fn hex256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Report envelope
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    cli_version: &'static str,
    library_version: &'static str,
    command: &'a str,
    /// SHA-256 over (command, resolved config, source provenance).
    config_hash: String,
    config: Value,
    source: Option<&'a Provenance>,
    report: R,
}

/// Print the report envelope to stdout and, with an output directory, also
/// write it as `report.json`.
fn emit<R: Serialize>(
    command: &str,
    config: Value,
    source: Option<&Provenance>,
    report: R,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let hash_input = serde_json::to_vec(&json!({
        "command": command,
        "config": &config,
        "source": &source,
    }))?;
    let envelope = Envelope {
        cli_version: env!("CARGO_PKG_VERSION"),
        library_version: slowmix::VERSION,
        command,
        config_hash: hex256(&hash_input),
        config,
        source,
        report,
    };
    let text = serde_json::to_string_pretty(&envelope)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), format!("{text}\n"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parameter resolution
// ---------------------------------------------------------------------------

fn require_n(n: u64) -> Result<usize, CliError> {
    if n == 0 {
        return Err(CliError::Config("n must be at least 1".into()));
    }
    usize::try_from(n).map_err(|_| CliError::Config(format!("n = {n} does not fit this platform")))
}

/// Seed precedence: config file < SLOWMIX_SEED < --seed flag < default 0.
fn resolve_seed(config: Option<u64>, flag: Option<u64>) -> Result<u64, CliError> {
    let mut seed = config.unwrap_or(0);
    if let Ok(text) = std::env::var("SLOWMIX_SEED") {
        seed = text.trim().parse().map_err(|_| {
            CliError::Config(format!("SLOWMIX_SEED must be an unsigned integer, got {text:?}"))
        })?;
    }
    if let Some(s) = flag {
        seed = s;
    }
    Ok(seed)
}

/// Counting-depth precedence: --k-n < --alpha-n < config < the library's
/// threshold-fitting default.
fn resolve_depth(
    flags: &DepthArgs,
    config_k: Option<usize>,
    config_alpha: Option<f64>,
    alphabet: Alphabet,
    n: u64,
) -> Result<usize, CliError> {
    if flags.k_n.is_some() && flags.alpha_n.is_some() {
        return Err(CliError::Config(
            "set either --k-n or --alpha-n, not both".into(),
        ));
    }
    let (k, alpha) = if flags.k_n.is_some() || flags.alpha_n.is_some() {
        (flags.k_n, flags.alpha_n)
    } else {
        if config_k.is_some() && config_alpha.is_some() {
            return Err(CliError::Config(
                "config sets both k_n and alpha_n; pick one".into(),
            ));
        }
        (config_k, config_alpha)
    };
    if let Some(k) = k {
        return Ok(k);
    }
    if let Some(alpha) = alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha_n must lie in (0, 1), got {alpha}"
            )));
        }
        return Ok((alpha * (n as f64).log2()).floor() as usize);
    }
    Ok(slowmix::estimator::default_depth(alphabet, n))
}

fn parse_past(text: &str, alphabet: Alphabet) -> Result<ContextString, CliError> {
    let past: ContextString = text
        .parse()
        .map_err(|e: StringError| CliError::Config(format!("--past {text:?}: {e}")))?;
    if let Some(&bad) = past.symbols().iter().find(|&&s| !alphabet.contains(s)) {
        return Err(CliError::Config(format!(
            "--past {text:?}: symbol {bad} outside the {}-ary alphabet",
            alphabet.size()
        )));
    }
    Ok(past)
}

/// Default start context: all-ones of the required length (symbol 1 exists
/// for every supported alphabet).
fn resolve_past(
    text: Option<&str>,
    need: usize,
    alphabet: Alphabet,
) -> Result<ContextString, CliError> {
    match text {
        Some(t) => parse_past(t, alphabet),
        None => Ok(ContextString::from_raw(vec![1; need])),
    }
}

/// Decay specs: `zero`, `exponential:G`, `polynomial:R`, or
/// `table:v1,v2,...` with an optional `:zero`, `:geometric:C:R`, or
/// `:polynomial:C:P` tail.
fn parse_decay(spec: &str) -> Result<DecayProfile, CliError> {
    let bad = |why: &str| CliError::Config(format!("decay spec {spec:?}: {why}"));
    let num = |s: &str| -> Result<f64, CliError> {
        s.parse::<f64>()
            .map_err(|_| bad(&format!("{s:?} is not a number")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let profile = match parts.as_slice() {
        ["zero"] => DecayProfile::zero(),
        ["exponential", g] => DecayProfile::exponential(num(g)?)?,
        ["polynomial", r] => DecayProfile::polynomial(num(r)?)?,
        ["table", vals] | ["table", vals, "zero"] => {
            DecayProfile::table(parse_values(vals, spec)?, TailBound::Zero)?
        }
        ["table", vals, "geometric", c, r] => DecayProfile::table(
            parse_values(vals, spec)?,
            TailBound::Geometric {
                coeff: num(c)?,
                ratio: num(r)?,
            },
        )?,
        ["table", vals, "polynomial", c, p] => DecayProfile::table(
            parse_values(vals, spec)?,
            TailBound::Polynomial {
                coeff: num(c)?,
                power: num(p)?,
            },
        )?,
        _ => return Err(bad("expected zero | exponential:G | polynomial:R | table:...")),
    };
    Ok(profile)
}

fn parse_values(vals: &str, spec: &str) -> Result<Vec<f64>, CliError> {
    vals.split(',')
        .map(|v| {
            v.parse::<f64>().map_err(|_| {
                CliError::Config(format!("decay spec {spec:?}: {v:?} is not a number"))
            })
        })
        .collect()
}

fn resolve_decay(
    flag: Option<&str>,
    config: Option<&DecayProfile>,
) -> Result<DecayProfile, CliError> {
    if let Some(spec) = flag {
        return parse_decay(spec);
    }
    Ok(config.cloned().unwrap_or_else(DecayProfile::zero))
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

fn write_counts_csv(path: &Path, counts: &SampleCounts) -> Result<(), CliError> {
    let alphabet = Alphabet::new(counts.alphabet).expect("counts carry a valid alphabet");
    let arity = counts.alphabet as u8;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window", "context", "input", "output", "count"])?;
    for win in 0..counts.num_windows() {
        let ctx = ContextString::decode(win, counts.k, alphabet).to_string();
        for input in 0..arity {
            for output in 0..arity {
                w.write_record([
                    win.to_string(),
                    ctx.clone(),
                    input.to_string(),
                    output.to_string(),
                    counts.n_w_b_a(win, output, input).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory_csv(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "input", "output"])?;
    for (j, (x, y)) in trace.x.iter().zip(&trace.y).enumerate() {
        w.write_record([j.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_coalescence_csv(path: &Path, rows: &[CoupleRunRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run",
        "seed",
        "coalesced",
        "tau",
        "divergences_after",
        "steps",
        "matched_steps",
    ])?;
    for row in rows {
        w.write_record([
            row.run.to_string(),
            row.seed.to_string(),
            row.tau.is_some().to_string(),
            row.tau.map(|t| t.to_string()).unwrap_or_default(),
            row.divergences_after.to_string(),
            row.steps.to_string(),
            row.matched_steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Simple commands
// ---------------------------------------------------------------------------

pub fn fixtures_cmd(out: Option<&Path>) -> Result<(), CliError> {
    emit("fixtures", json!({}), None, catalog(), out)
}

pub fn model_validate(src: &SourceArgs, out: Option<&Path>) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let report = match &fixture {
        Fixture::Model(m) => json!({
            "valid": true,
            "kind": "model",
            "alphabet": m.alphabet().size(),
            "depth": m.depth(),
            "leaves": leaf_strings(m.tree()),
        }),
        Fixture::Channel(ch) => json!({
            "valid": true,
            "kind": "channel",
            "alphabet": ch.alphabet().size(),
            "depth": ch.depth(),
            "leaves": leaf_strings(ch.tree()),
            "input": &ch.input_law()[..],
        }),
    };
    emit("model validate", json!({}), Some(&prov), report, out)
}

fn leaf_strings(tree: &slowmix::tree::ContextTree) -> Vec<String> {
    tree.leaves().iter().map(ToString::to_string).collect()
}

pub fn stationary(src: &SourceArgs, out: Option<&Path>) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let model = fixture.output_model()?;
    let st = model.stationary()?;
    emit("stationary", json!({}), Some(&prov), st.as_ref(), out)
}

pub fn aggregate(src: &SourceArgs, depth: usize, out: Option<&Path>) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let report = match &fixture {
        Fixture::Model(m) => json!({
            "kind": "model",
            "aggregated": aggregate_process(m, depth)?,
        }),
        Fixture::Channel(ch) => json!({
            "kind": "channel",
            "aggregated": aggregate_channel(ch, depth)?,
        }),
    };
    emit("aggregate", json!({ "depth": depth }), Some(&prov), report, out)
}

pub fn rate(src: &SourceArgs, depth: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let ch = fixture.into_channel()?;
    let rate = information_rate(&ch)?;
    let bound = depth.map(|k| aggregated_rate_bound(&ch, k)).transpose()?;
    emit(
        "rate",
        json!({ "depth": depth }),
        Some(&prov),
        json!({ "rate": rate, "aggregated_bound": bound }),
        out,
    )
}

pub fn simulate_cmd(
    src: &SourceArgs,
    n: u64,
    seed: Option<u64>,
    past: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let ch = fixture.into_channel()?;
    let n = require_n(n)?;
    let seed = resolve_seed(None, seed)?;
    let past = resolve_past(past, ch.depth(), ch.alphabet())?;
    let trace = simulate(&ch, n, &past, seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &trace)?;
    }
    emit(
        "simulate",
        json!({ "n": n, "seed": seed, "past": past.to_string() }),
        Some(&prov),
        &trace,
        out,
    )
}

pub fn ctw_cmd(
    src: &SourceArgs,
    n: u64,
    seed: Option<u64>,
    past: Option<&str>,
    depth: &DepthArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let ch = fixture.into_channel()?;
    let n_steps = require_n(n)?;
    let seed = resolve_seed(None, seed)?;
    let k = resolve_depth(depth, None, None, ch.alphabet(), n)?;
    let past = resolve_past(past, ch.depth().max(k), ch.alphabet())?;
    let trace = simulate(&ch, n_steps, &past, seed)?;
    let certificate = redundancy_certificate(&trace, k)?;
    emit(
        "ctw",
        json!({ "n": n, "seed": seed, "depth": k, "past": past.to_string() }),
        Some(&prov),
        certificate,
        out,
    )
}

// ---------------------------------------------------------------------------
// Estimation pipeline
// ---------------------------------------------------------------------------

/// Concentration-certificate summary attached to estimation reports.
#[derive(Serialize)]
struct CertificateBlock {
    /// Residual confidence the threshold is inverted at.
    residual_confidence: f64,
    /// Deviation radius for good-state occupancy counts.
    threshold: f64,
    /// The same radius on the ratio scale (threshold / n_tilde).
    deviation_ratio: f64,
    /// Whether the restriction to the good set is aperiodic (the
    /// concentration bound requires it).
    aperiodic: bool,
}

fn certificate_block(report: &EstimationReport) -> Result<CertificateBlock, CliError> {
    let aperiodic = restriction_aperiodic(&report.good)?;
    let threshold = certificate_threshold(report.n_tilde, report.b, CERT_CONFIDENCE);
    Ok(CertificateBlock {
        residual_confidence: CERT_CONFIDENCE,
        threshold,
        deviation_ratio: threshold / report.n_tilde as f64,
        aperiodic,
    })
}

/// Depth-k windows that did not clear the good-state threshold; their
/// occupancy ratios carry no certificate.
fn uncertified_states(good: &GoodSet, counts: &SampleCounts) -> Vec<String> {
    let alphabet = Alphabet::new(counts.alphabet).expect("counts carry a valid alphabet");
    (0..counts.num_windows())
        .filter(|&w| !good.contains(w))
        .map(|w| ContextString::decode(w, counts.k, alphabet).to_string())
        .collect()
}

pub fn estimate_cmd(
    src: &SourceArgs,
    n: u64,
    seed: Option<u64>,
    past: Option<&str>,
    depth: &DepthArgs,
    decay: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (fixture, prov) = load_source(src)?;
    let ch = fixture.into_channel()?;
    let n_steps = require_n(n)?;
    let seed = resolve_seed(None, seed)?;
    let k = resolve_depth(depth, None, None, ch.alphabet(), n)?;
    let d = resolve_decay(decay, None)?;
    let past = resolve_past(past, ch.depth().max(k), ch.alphabet())?;
    let trace = simulate(&ch, n_steps, &past, seed)?;
    let counts = count(&trace, k)?;
    let report = estimate(&counts, &d, ch.input_law())?;
    let certificate = certificate_block(&report)?;
    let uncertified = uncertified_states(&report.good, &counts);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_counts_csv(&dir.join("counts.csv"), &counts)?;
    }
    emit(
        "estimate",
        json!({
            "n": n,
            "seed": seed,
            "k_n": k,
            "decay": &d,
            "past": past.to_string(),
        }),
        Some(&prov),
        json!({
            "estimation": report,
            "certificate": certificate,
            "uncertified_states": uncertified,
        }),
        out,
    )
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct CoupleRunRow {
    run: u64,
    seed: u64,
    tau: Option<usize>,
    divergences_after: u64,
    steps: usize,
    matched_steps: usize,
}

#[derive(Serialize)]
pub struct CouplingSummary {
    runs: u64,
    horizon: usize,
    ell: usize,
    window: usize,
    start_left: String,
    start_right: String,
    coalesced: u64,
    mean_tau: Option<f64>,
    max_divergences_after: u64,
    per_run: Vec<CoupleRunRow>,
}

/// Repeat a state pattern backwards so the tiled string's suffix is the
/// state itself.
fn tile(state: &ContextString, len: usize) -> ContextString {
    let pattern = state.symbols();
    let mut symbols = vec![0u8; len];
    for i in 0..len {
        symbols[len - 1 - i] = pattern[pattern.len() - 1 - (i % pattern.len())];
    }
    ContextString::from_raw(symbols)
}

fn pick_start(
    flag: Option<&str>,
    fallback: Option<&ContextString>,
    good: &GoodSet,
) -> Result<ContextString, CliError> {
    match flag {
        Some(text) => {
            let state = parse_past(text, good.alphabet())?;
            if state.len() != good.depth() {
                return Err(CliError::Config(format!(
                    "start context {text:?} must have the counting depth {}",
                    good.depth()
                )));
            }
            Ok(state)
        }
        None => fallback.cloned().ok_or_else(|| {
            CliError::Certificate("coupling needs at least one good state".into())
        }),
    }
}

struct CoupleSpec<'a> {
    good: &'a GoodSet,
    ell: usize,
    runs: u64,
    horizon: usize,
    seed: u64,
    start_left: ContextString,
    start_right: ContextString,
}

fn coupling_summary(
    model: &ContextTreeModel,
    spec: &CoupleSpec,
) -> Result<CouplingSummary, CliError> {
    let window = window_length(model.depth(), spec.good.depth(), spec.ell);
    let left_start = tile(&spec.start_left, window);
    let right_start = tile(&spec.start_right, window);
    let mut per_run = Vec::with_capacity(spec.runs as usize);
    let mut coalesced = 0u64;
    let mut tau_sum = 0usize;
    let mut max_div = 0u64;
    for r in 0..spec.runs {
        let pair_seed = spec.seed.wrapping_add(r);
        let left = RestrictionChain::new(model, spec.good, &left_start, window, DEFAULT_EXCURSION_CAP)?;
        let right =
            RestrictionChain::new(model, spec.good, &right_start, window, DEFAULT_EXCURSION_CAP)?;
        let mut pair = CoupledPair::new(left, right, spec.ell, pair_seed)?;
        let run = coupled_run(&mut pair, spec.horizon)?;
        if let Some(t) = run.coalescence.tau {
            coalesced += 1;
            tau_sum += t;
        }
        max_div = max_div.max(run.coalescence.divergences_after);
        per_run.push(CoupleRunRow {
            run: r,
            seed: pair_seed,
            tau: run.coalescence.tau,
            divergences_after: run.coalescence.divergences_after,
            steps: run.records.len(),
            matched_steps: run.records.iter().filter(|s| s.matched).count(),
        });
    }
    Ok(CouplingSummary {
        runs: spec.runs,
        horizon: spec.horizon,
        ell: spec.ell,
        window,
        start_left: spec.start_left.to_string(),
        start_right: spec.start_right.to_string(),
        coalesced,
        mean_tau: (coalesced > 0).then(|| tau_sum as f64 / coalesced as f64),
        max_divergences_after: max_div,
        per_run,
    })
}

fn clamp_ell(raw: u64) -> usize {
    (raw.max(1) as usize).min(MAX_ELL)
}

pub struct CoupleRequest<'a> {
    pub src: &'a SourceArgs,
    pub n: u64,
    pub seed: Option<u64>,
    pub past: Option<&'a str>,
    pub depth: &'a DepthArgs,
    pub decay: Option<&'a str>,
    pub runs: u64,
    pub horizon: usize,
    pub ell: Option<usize>,
    pub start_left: Option<&'a str>,
    pub start_right: Option<&'a str>,
    pub out: Option<&'a Path>,
}

pub fn couple_cmd(req: CoupleRequest) -> Result<(), CliError> {
    let (fixture, prov) = load_source(req.src)?;
    let ch = fixture.into_channel()?;
    let n_steps = require_n(req.n)?;
    let seed = resolve_seed(None, req.seed)?;
    let k = resolve_depth(req.depth, None, None, ch.alphabet(), req.n)?;
    let d = resolve_decay(req.decay, None)?;
    let past = resolve_past(req.past, ch.depth().max(k), ch.alphabet())?;
    let trace = simulate(&ch, n_steps, &past, seed)?;
    let counts = count(&trace, k)?;
    let good = good_states(&counts, &d)?;
    if good.is_empty() {
        return Err(CliError::Certificate(
            "no good states at this depth; nothing to couple".into(),
        ));
    }
    let states = good.states();
    let ell = req.ell.unwrap_or(clamp_ell(d.coalescence_horizon(req.n)?));
    let spec = CoupleSpec {
        good: &good,
        ell,
        runs: req.runs,
        horizon: req.horizon,
        seed,
        start_left: pick_start(req.start_left, states.first(), &good)?,
        start_right: pick_start(req.start_right, states.last(), &good)?,
    };
    let model = ch.output_process()?;
    let summary = coupling_summary(model.as_ref(), &spec)?;
    if let Some(dir) = req.out {
        fs::create_dir_all(dir)?;
        write_coalescence_csv(&dir.join("coalescence.csv"), &summary.per_run)?;
    }
    emit(
        "couple",
        json!({
            "n": req.n,
            "seed": seed,
            "k_n": k,
            "decay": &d,
            "past": past.to_string(),
            "runs": req.runs,
            "horizon": req.horizon,
            "ell": ell,
            "start_left": summary.start_left,
            "start_right": summary.start_right,
        }),
        Some(&prov),
        &summary,
        req.out,
    )
}

// ---------------------------------------------------------------------------
// Full experiment
// ---------------------------------------------------------------------------

/// Experiment description file for `run`; flags override, SLOWMIX_SEED sits
/// between the file and the flags (seed only).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    fixture: Option<String>,
    model: Option<PathBuf>,
    n: Option<u64>,
    seed: Option<u64>,
    k_n: Option<usize>,
    alpha_n: Option<f64>,
    decay: Option<DecayProfile>,
    past: Option<String>,
    out: Option<PathBuf>,
    couple: Option<CoupleConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoupleConfig {
    runs: u64,
    horizon: Option<usize>,
    ell: Option<usize>,
}

pub struct RunRequest<'a> {
    pub config: Option<&'a Path>,
    pub src: &'a SourceArgs,
    pub n: Option<u64>,
    pub seed: Option<u64>,
    pub past: Option<&'a str>,
    pub depth: &'a DepthArgs,
    pub decay: Option<&'a str>,
    pub couple_runs: Option<u64>,
    pub couple_horizon: Option<usize>,
    pub ell: Option<usize>,
    pub out: Option<&'a Path>,
}

pub fn run_cmd(req: RunRequest) -> Result<(), CliError> {
    let config: ExperimentConfig = match req.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };

    // Source: flags win over the config file.
    let merged_src = if req.src.fixture.is_some() || req.src.model.is_some() {
        req.src.clone()
    } else {
        SourceArgs {
            fixture: config.fixture.clone(),
            model: config.model.clone(),
        }
    };
    let (fixture, prov) = load_source(&merged_src)?;
    let ch = fixture.into_channel()?;

    let n = req
        .n
        .or(config.n)
        .ok_or_else(|| CliError::Config("n is required (config file or --n)".into()))?;
    let n_steps = require_n(n)?;
    let seed = resolve_seed(config.seed, req.seed)?;
    let k = resolve_depth(req.depth, config.k_n, config.alpha_n, ch.alphabet(), n)?;
    let d = resolve_decay(req.decay, config.decay.as_ref())?;
    let past_text = req.past.map(str::to_owned).or(config.past);
    let past = resolve_past(past_text.as_deref(), ch.depth().max(k), ch.alphabet())?;
    let out = req.out.map(Path::to_path_buf).or(config.out);

    let trace = simulate(&ch, n_steps, &past, seed)?;
    let counts = count(&trace, k)?;
    let report = estimate(&counts, &d, ch.input_law())?;
    let certificate = certificate_block(&report)?;
    let uncertified = uncertified_states(&report.good, &counts);

    // Optional coupling stage, reusing the certified good set.
    let couple_runs = req.couple_runs.or(config.couple.as_ref().map(|c| c.runs));
    let coupling = match couple_runs {
        None => None,
        Some(runs) => {
            let horizon = req
                .couple_horizon
                .or(config.couple.as_ref().and_then(|c| c.horizon))
                .unwrap_or(DEFAULT_HORIZON);
            let ell = req
                .ell
                .or(config.couple.as_ref().and_then(|c| c.ell))
                .unwrap_or(clamp_ell(report.ell_n));
            let states = report.good.states();
            let spec = CoupleSpec {
                good: &report.good,
                ell,
                runs,
                horizon,
                seed,
                start_left: pick_start(None, states.first(), &report.good)?,
                start_right: pick_start(None, states.last(), &report.good)?,
            };
            let model = ch.output_process()?;
            Some(coupling_summary(model.as_ref(), &spec)?)
        }
    };

    if let Some(dir) = out.as_deref() {
        fs::create_dir_all(dir)?;
        write_counts_csv(&dir.join("counts.csv"), &counts)?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &trace)?;
        if let Some(summary) = &coupling {
            write_coalescence_csv(&dir.join("coalescence.csv"), &summary.per_run)?;
        }
    }

    let couple_config = coupling.as_ref().map(|c| {
        json!({ "runs": c.runs, "horizon": c.horizon, "ell": c.ell })
    });
    emit(
        "run",
        json!({
            "n": n,
            "seed": seed,
            "k_n": k,
            "decay": &d,
            "past": past.to_string(),
            "couple": couple_config,
        }),
        Some(&prov),
        json!({
            "simulate": {
                "n": n,
                "seed": seed,
                "past": past.to_string(),
                "channel_depth": ch.depth(),
            },
            "counts": {
                "depth": counts.k,
                "windows": counts.num_windows(),
                "n": counts.n,
            },
            "estimation": report,
            "certificate": certificate,
            "uncertified_states": uncertified,
            "coupling": coupling,
        }),
        out.as_deref(),
    )
}

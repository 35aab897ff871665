//! Named experiment runs: one config in, a deterministic table of rows out.
//!
//! [`run`] dispatches on the experiment kind, derives every trial's seed
//! from `seed0` with [`trial_seed`], and aggregates per-trial values into
//! [`ResultRow`]s.  Rows depend only on the semantic inputs — kind,
//! parameters, trial count, `seed0` — never on worker count or output
//! routing, so any rerun of a config reproduces them bit for bit (the
//! wall-clock field is the sole exception).  Long fixed-step invasions
//! checkpoint their engine state to disk so an interrupted run resumes
//! instead of restarting; see [`checkpointed_trace`].

pub mod emit;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::invasion::{
    invade_until, Invasion, InvasionTrace, StopRule, TraceOutcome, TraceStep,
};
use crate::observables::events::{detect_event_dkm, dyadic_radii, ThresholdManifest};
use crate::observables::{
    acceptance_profile, detect_outlets, radius, stabilization_radius, uniform_bins, xi_count,
    AcceptanceProfile, BinnedProfile,
};
use crate::percolation::{
    config_digest, correlation_length, crossing_probability, four_arm_probability, pn_qn,
    point_to_boundary, Estimate,
};
use crate::weights::{trial_seed, WeightField, WeightSource, P_C};

/// Steps between checkpoint writes for long invasions driven by [`run`].
pub const CHECKPOINT_EVERY: u64 = 1 << 20;

/// Seed-stream salts for auxiliary estimates inside a run.  Far outside
/// any realistic trial-index range, so they never collide with the
/// per-trial streams `trial_seed(seed0, 0..trials)`.
const THRESHOLD_SALT: u64 = 0x7468_5f73_616c_7400;
const PI_SALT: u64 = 0x7069_5f73_616c_7400;

/// The estimand families the CLI and config files can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Left-right crossing probability of the `(0,0)..(n,m)` rectangle at
    /// threshold `p`.
    Crossing,
    /// Finite-size correlation length at `p` with tolerance `eps`.
    Corrlen,
    /// Scale-`n` upper and lower crossing thresholds at tolerance `eps`.
    Pnqn,
    /// Probability that the origin reaches the boundary of `B(n)` at `p`.
    Pi,
    /// Alternating four-arm probability at the central edge, scale `n`.
    Fourarm,
    /// Acceptance ratio per weight bin over `n`-step invasions.
    Profile,
    /// Acceptance ratios over the three diagnostic weight ranges.
    ProfileStep,
    /// Count of weights in `(1/2, 1/2 + eps]` invaded within `n` steps.
    Xi,
    /// Sup-norm radius of the `n`-step invaded cluster.
    Radius,
    /// Largest box left untouched after step `n` within a longer horizon.
    Stabilize,
    /// Outlets (weights above 1/2 exceeding every later one) in `n` steps.
    Outlets,
    /// Hit rate of the annulus-event detector at dyadic scales `(n, m)`.
    Events,
    /// Invaded edges inside `B(n)` against the reference `n²·π̂(n)`.
    Scaling,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 13] = [
        ExperimentKind::Crossing,
        ExperimentKind::Corrlen,
        ExperimentKind::Pnqn,
        ExperimentKind::Pi,
        ExperimentKind::Fourarm,
        ExperimentKind::Profile,
        ExperimentKind::ProfileStep,
        ExperimentKind::Xi,
        ExperimentKind::Radius,
        ExperimentKind::Stabilize,
        ExperimentKind::Outlets,
        ExperimentKind::Events,
        ExperimentKind::Scaling,
    ];

    /// The kebab-case name used in configs and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Crossing => "crossing",
            ExperimentKind::Corrlen => "corrlen",
            ExperimentKind::Pnqn => "pnqn",
            ExperimentKind::Pi => "pi",
            ExperimentKind::Fourarm => "fourarm",
            ExperimentKind::Profile => "profile",
            ExperimentKind::ProfileStep => "profile-step",
            ExperimentKind::Xi => "xi",
            ExperimentKind::Radius => "radius",
            ExperimentKind::Stabilize => "stabilize",
            ExperimentKind::Outlets => "outlets",
            ExperimentKind::Events => "events",
            ExperimentKind::Scaling => "scaling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                invalid(format!(
                    "unknown experiment kind `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// How [`emit`] renders the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Svg => "svg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(invalid(format!(
                "unknown output format `{other}`; expected csv, json, or svg"
            ))),
        }
    }
}

/// Estimator parameters.  Every kind reads only the fields it documents
/// and rejects a config that omits a required one, naming the field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Primary scale: box radius, rectangle width, step count, or dyadic
    /// index, depending on the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Secondary scale: rectangle height (`crossing`), spread exponent
    /// (`events`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    /// Percolation threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Tolerance for threshold and near-critical estimands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Weight-histogram bin count (`profile`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Horizon as a multiple of `n` (`stabilize`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_factor: Option<u64>,
    /// Truncation radius for the outward-link search (`events`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_truncate: Option<i32>,
}

impl Params {
    /// `n` as a positive lattice scale.
    fn scale(&self, kind: &str) -> Result<i32> {
        let n = self.require_n(kind)?;
        i32::try_from(n)
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| invalid(format!("`n` must be in 1..=2^31-1, got {n}")))
    }

    /// `n` as a positive step count.
    fn steps(&self, kind: &str) -> Result<u64> {
        let n = self.require_n(kind)?;
        if n == 0 {
            return Err(invalid("`n` must be positive"));
        }
        Ok(n)
    }

    fn require_n(&self, kind: &str) -> Result<u64> {
        self.n.ok_or_else(|| invalid(format!("`{kind}` requires parameter `n`")))
    }
}

/// A complete experiment description.  `workers`, `out`, and `format`
/// steer scheduling and rendering only; the digest and the rows ignore
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub params: Params,
    pub seed0: u64,
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, params: Params, seed0: u64, trials: u64) -> Self {
        ExperimentConfig { kind, params, seed0, trials, workers: None, out: None, format: None }
    }

    /// Digest of the semantic inputs: kind, params, seed0, trials.
    pub fn digest(&self) -> String {
        config_digest(&serde_json::json!({
            "kind": self.kind.name(),
            "params": self.params,
            "seed0": self.seed0,
            "trials": self.trials,
        }))
    }
}

/// One output row: a single scalar estimate at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// What `mean` estimates, e.g. `crossing` or `profile_ratio`.
    pub estimand: String,
    /// Abscissa for plots: the swept parameter of this row.
    pub x: f64,
    /// Remaining parameters as `key=value` pairs joined with `;`.
    pub params: String,
    pub mean: f64,
    /// Standard error, scaled so `mean ± 2·se` is the reported interval.
    pub se: f64,
    pub trials: u64,
    pub seed0: u64,
    pub config_digest: String,
    /// Wall-clock duration of the producing run, in milliseconds.  The
    /// only field allowed to differ between reruns of the same config.
    pub wall_ms: u64,
}

fn row(estimand: &str, x: f64, params: String, mean: f64, se: f64, trials: u64) -> ResultRow {
    ResultRow {
        estimand: estimand.to_string(),
        x,
        params,
        mean,
        se,
        trials,
        seed0: 0,
        config_digest: String::new(),
        wall_ms: 0,
    }
}

/// Execute a config and return its rows.
///
/// Trial `i` draws its weights from `trial_seed(config.seed0, i)`; results
/// are merged in trial order, so the rows are identical for every worker
/// count.  Invalid parameters are rejected up front with the violated
/// requirement named.
pub fn run(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let started = Instant::now();
    if config.trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let mut rows = match config.workers {
        None => dispatch(config)?,
        Some(0) => return Err(invalid("worker count must be positive")),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| invalid(format!("cannot build worker pool: {e}")))?;
            pool.install(|| dispatch(config))?
        }
    };
    let digest = config.digest();
    let wall_ms = started.elapsed().as_millis() as u64;
    for r in &mut rows {
        r.seed0 = config.seed0;
        r.config_digest.clone_from(&digest);
        r.wall_ms = wall_ms;
    }
    Ok(rows)
}

fn dispatch(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match config.kind {
        ExperimentKind::Crossing => run_crossing(config),
        ExperimentKind::Corrlen => run_corrlen(config),
        ExperimentKind::Pnqn => run_pnqn(config),
        ExperimentKind::Pi => run_pi(config),
        ExperimentKind::Fourarm => run_fourarm(config),
        ExperimentKind::Profile => run_profile(config),
        ExperimentKind::ProfileStep => run_profile_step(config),
        ExperimentKind::Xi => run_xi(config),
        ExperimentKind::Radius => run_radius(config),
        ExperimentKind::Stabilize => run_stabilize(config),
        ExperimentKind::Outlets => run_outlets(config),
        ExperimentKind::Events => run_events(config),
        ExperimentKind::Scaling => run_scaling(config),
    }
}

fn run_crossing(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.scale("crossing")?;
    let m = match cfg.params.m {
        None => n,
        Some(v) => i32::try_from(v)
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| invalid(format!("`m` must be in 1..=2^31-1, got {v}")))?,
    };
    let p = cfg.params.p.unwrap_or(P_C);
    let est = crossing_probability(n, m, p, cfg.trials, cfg.seed0)?;
    Ok(vec![row(
        "crossing",
        n as f64,
        format!("m={m};p={p}"),
        est.mean,
        est.std_error,
        est.trials,
    )])
}

fn run_corrlen(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let p = cfg.params.p.ok_or_else(|| invalid("`corrlen` requires parameter `p`"))?;
    let eps = cfg.params.eps.unwrap_or(0.1);
    let cl = correlation_length(p, eps, cfg.trials, cfg.seed0)?;
    let params = format!("eps={eps};confident={};censored={}", cl.confident, cl.censored);
    Ok(vec![row("corrlen", p, params, cl.n as f64, 0.0, cfg.trials)])
}

fn run_pnqn(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.scale("pnqn")?;
    let eps = cfg.params.eps.unwrap_or(0.05);
    let est = pn_qn(n, eps, cfg.trials, cfg.seed0)?;
    let params = format!("eps={eps};confident={}", est.confident);
    // A quarter of the bracket width, so mean ± 2·se spans the bracket.
    let p_se = (est.p_bracket.1 - est.p_bracket.0) / 4.0;
    let q_se = (est.q_bracket.1 - est.q_bracket.0) / 4.0;
    Ok(vec![
        row("p_n", n as f64, params.clone(), est.p(), p_se, cfg.trials),
        row("q_n", n as f64, params, est.q(), q_se, cfg.trials),
    ])
}

fn run_pi(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.scale("pi")?;
    let p = cfg.params.p.unwrap_or(P_C);
    let est = point_to_boundary(p, n, cfg.trials, cfg.seed0)?;
    Ok(vec![row("pi", n as f64, format!("p={p}"), est.mean, est.std_error, est.trials)])
}

fn run_fourarm(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.scale("fourarm")?;
    let est = four_arm_probability(n, cfg.trials, cfg.seed0)?;
    Ok(vec![row("fourarm", n as f64, String::new(), est.mean, est.std_error, est.trials)])
}

/// Aggregate per-trial weight histograms over the ensemble.
fn profile_ensemble(cfg: &ExperimentConfig, steps: u64, bins: usize) -> Result<AcceptanceProfile> {
    let profiles = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let field = WeightField::new(trial_seed(cfg.seed0, i));
            BinnedProfile::from_run(&field, steps, uniform_bins(bins))
        })
        .collect::<Result<Vec<_>>>()?;
    acceptance_profile(&profiles)
}

fn run_profile(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let steps = cfg.params.steps("profile")?;
    let bins = cfg.params.bins.unwrap_or(100);
    if bins == 0 || bins > 4096 {
        return Err(invalid(format!("`bins` must be in 1..=4096, got {bins}")));
    }
    let prof = profile_ensemble(cfg, steps, bins)?;
    let mut out = Vec::new();
    for b in &prof.bins {
        let Some(ratio) = b.ratio else { continue };
        // Quarter of the bootstrap interval, so ± 2·se spans it.
        let se = b.ci.map(|(lo, hi)| (hi - lo) / 4.0).unwrap_or(0.0);
        out.push(row(
            "profile",
            0.5 * (b.lo + b.hi),
            format!("lo={};hi={};n={steps}", b.lo, b.hi),
            ratio,
            se,
            cfg.trials,
        ));
    }
    Ok(out)
}

/// The three diagnostic weight ranges: well below 1/2, well above, and the
/// sliver just above it.
pub const PROFILE_STEP_RANGES: [(f64, f64); 3] = [(0.35, 0.45), (0.55, 0.65), (0.5, 0.51)];

fn run_profile_step(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let steps = match cfg.params.n {
        None => 100_000,
        Some(0) => return Err(invalid("`n` must be positive")),
        Some(v) => v,
    };
    let prof = profile_ensemble(cfg, steps, 100)?;
    let mut out = Vec::new();
    for (lo, hi) in PROFILE_STEP_RANGES {
        let (invaded, checked) = prof.range_counts(lo, hi)?;
        let (mean, se) = if checked == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let r = invaded as f64 / checked as f64;
            // Binomial-model error bar on the ratio of sums; indicative
            // only, since acceptances within a trial are dependent.
            (r, (r * (1.0 - r) / checked as f64).sqrt())
        };
        out.push(row(
            "profile_step",
            0.5 * (lo + hi),
            format!("lo={lo};hi={hi};n={steps}"),
            mean,
            se,
            cfg.trials,
        ));
    }
    Ok(out)
}

/// Where trial `i` of this config checkpoints, if it should at all: runs
/// of at least [`CHECKPOINT_EVERY`] steps with an output path configured.
fn checkpoint_path(cfg: &ExperimentConfig, trial: u64, steps: u64) -> Option<PathBuf> {
    let out = cfg.out.as_ref()?;
    if steps < CHECKPOINT_EVERY {
        return None;
    }
    let mut os = out.as_os_str().to_owned();
    os.push(format!(".trial{trial}.ckpt"));
    Some(PathBuf::from(os))
}

/// One fixed-step trace per trial, reduced to a scalar.
fn trace_values<F>(cfg: &ExperimentConfig, steps: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&InvasionTrace) -> Result<f64> + Sync,
{
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let field = WeightField::new(trial_seed(cfg.seed0, i));
            let trace = match checkpoint_path(cfg, i, steps) {
                Some(path) => checkpointed_trace(&field, steps, CHECKPOINT_EVERY, &path)?,
                None => invade_until(&field, StopRule::Steps(steps)),
            };
            f(&trace)
        })
        .collect()
}

fn values_row(
    cfg: &ExperimentConfig,
    estimand: &str,
    x: f64,
    params: String,
    values: &[f64],
) -> ResultRow {
    let est = Estimate::from_values(values, cfg.seed0, (0, cfg.trials), String::new());
    row(estimand, x, params, est.mean, est.std_error, est.trials)
}

fn run_xi(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let steps = cfg.params.steps("xi")?;
    let eps = cfg.params.eps.unwrap_or(0.05);
    if eps < 0.0 {
        return Err(invalid(format!("`eps` must be nonnegative, got {eps}")));
    }
    let values = trace_values(cfg, steps, |t| xi_count(t, eps, steps).map(|v| v as f64))?;
    Ok(vec![values_row(cfg, "xi", steps as f64, format!("eps={eps}"), &values)])
}

fn run_radius(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let steps = cfg.params.steps("radius")?;
    let values = trace_values(cfg, steps, |t| radius(t, steps).map(|r| r as f64))?;
    Ok(vec![values_row(cfg, "radius", steps as f64, String::new(), &values)])
}

fn run_outlets(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let steps = cfg.params.steps("outlets")?;
    let values = trace_values(cfg, steps, |t| Ok(detect_outlets(t).len() as f64))?;
    Ok(vec![values_row(cfg, "outlets", steps as f64, String::new(), &values)])
}

fn run_stabilize(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.steps("stabilize")?;
    let hf = cfg.params.horizon_factor.unwrap_or(8);
    let results = (0..cfg.trials)
        .into_par_iter()
        .map(|i| stabilization_radius(&WeightField::new(trial_seed(cfg.seed0, i)), n, hf))
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<f64> = results.iter().map(|r| r.k as f64).collect();
    let censored: Vec<f64> = results.iter().map(|r| f64::from(u8::from(r.censored))).collect();
    let params = format!("horizon_factor={hf}");
    Ok(vec![
        values_row(cfg, "stabilize_k", n as f64, params.clone(), &ks),
        values_row(cfg, "stabilize_censored", n as f64, params, &censored),
    ])
}

fn run_events(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let k = u32::try_from(cfg.params.require_n("events")?)
        .map_err(|_| invalid("`n` (dyadic index) must fit in u32"))?;
    let m = match cfg.params.m {
        None => return Err(invalid("`events` requires parameter `m`")),
        Some(v) => u32::try_from(v).map_err(|_| invalid("`m` must fit in u32"))?,
    };
    let eps = cfg.params.eps.unwrap_or(0.05);
    let radii = dyadic_radii(k, m)?;
    let mut manifest =
        ThresholdManifest::new(eps, cfg.trials.max(2), trial_seed(cfg.seed0, THRESHOLD_SALT))?;
    manifest.compute(radii[2])?;
    let hits = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let field = WeightField::new(trial_seed(cfg.seed0, i));
            detect_event_dkm(&field, k, m, cfg.params.m_truncate, &manifest)
                .map(u64::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let successes: u64 = hits.iter().sum();
    let est = Estimate::from_indicator(
        successes,
        cfg.trials,
        cfg.seed0,
        (0, cfg.trials),
        String::new(),
    );
    let params = format!("k={k};m={m};eps={eps}");
    Ok(vec![row("event_rate", m as f64, params, est.mean, est.std_error, est.trials)])
}

fn run_scaling(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let n = cfg.params.scale("scaling")?;
    if n > 1 << 12 {
        return Err(invalid(format!("`n` must be at most 4096, got {n}")));
    }
    // Enough steps that the box could have filled completely before the
    // quiet-half rule is allowed to stop the run.
    let min_horizon = 16 * (n as u64) * (n as u64);
    let counts = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let field = WeightField::new(trial_seed(cfg.seed0, i));
            let mut engine = Invasion::new(&field);
            let mut s = 0u64;
            let mut last_touch = 0u64;
            loop {
                let (index, edge, _) = engine.advance();
                if edge.inner_norm() <= n {
                    last_touch = index;
                }
                if edge.norm() <= n {
                    s += 1;
                }
                // Quiet-half certificate: as many steps since the box was
                // last touched as it took to reach that touch.
                if index >= min_horizon && index >= 2 * last_touch {
                    break;
                }
            }
            s as f64
        })
        .collect::<Vec<f64>>();
    let s_est = Estimate::from_values(&counts, cfg.seed0, (0, cfg.trials), String::new());
    let pi = point_to_boundary(P_C, n, cfg.trials, trial_seed(cfg.seed0, PI_SALT))?;
    if pi.mean == 0.0 {
        return Err(Error::BudgetExhausted(format!(
            "no origin-to-boundary connection seen at scale {n}; raise trials"
        )));
    }
    let reference = (n as f64) * (n as f64) * pi.mean;
    let ratio = s_est.mean / reference;
    // First-order error propagation for the quotient of the two means.
    let rel = |est: &Estimate| {
        if est.mean == 0.0 {
            0.0
        } else {
            est.std_error / est.mean
        }
    };
    let ratio_se = ratio * (rel(&s_est).powi(2) + rel(&pi).powi(2)).sqrt();
    Ok(vec![
        row("box_count", n as f64, String::new(), s_est.mean, s_est.std_error, cfg.trials),
        row("pi", n as f64, "p=0.5".to_string(), pi.mean, pi.std_error, cfg.trials),
        row("scaling_ratio", n as f64, String::new(), ratio, ratio_se, cfg.trials),
    ])
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"IVEXCKP1";

/// Run a `steps`-step invasion, persisting engine state and the partial
/// trace to `path` every `every` steps.  When `path` already holds a
/// checkpoint for the same weight source, the run resumes from it; the
/// finished trace is bit-identical to an uninterrupted
/// `invade_until(field, StopRule::Steps(steps))`, and the checkpoint file
/// is removed on completion.
pub fn checkpointed_trace<W: WeightSource>(
    field: &W,
    steps: u64,
    every: u64,
    path: &Path,
) -> Result<InvasionTrace> {
    Ok(checkpointed_trace_budgeted(field, steps, every, path, None)?
        .expect("a run without a budget always completes"))
}

/// As [`checkpointed_trace`], but advance at most `budget` steps in this
/// call.  When the budget runs out first, the current state is written to
/// `path` and `None` is returned; a later call with the same arguments
/// picks up exactly there.
pub fn checkpointed_trace_budgeted<W: WeightSource>(
    field: &W,
    steps: u64,
    every: u64,
    path: &Path,
    budget: Option<u64>,
) -> Result<Option<InvasionTrace>> {
    if every == 0 {
        return Err(invalid("checkpoint interval must be positive"));
    }
    let (mut engine, mut trace_steps) = match std::fs::read(path) {
        Ok(bytes) => {
            let (snap, partial) = split_checkpoint(&bytes)?;
            let engine = Invasion::restore(field, snap)?;
            let partial = InvasionTrace::from_bytes(partial)?;
            if engine.step_count() != partial.len() as u64 {
                return Err(Error::MalformedTrace(
                    "checkpoint engine and trace disagree on step count".into(),
                ));
            }
            if partial.len() as u64 > steps {
                return Err(invalid(format!(
                    "checkpoint already has {} steps, beyond the requested {steps}",
                    partial.len()
                )));
            }
            (engine, partial.steps)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (Invasion::new(field), Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut advanced = 0u64;
    while (trace_steps.len() as u64) < steps {
        if budget.is_some_and(|b| advanced >= b) {
            write_checkpoint(path, &engine, field, &trace_steps, steps)?;
            return Ok(None);
        }
        trace_steps.push(engine.advance_step());
        advanced += 1;
        let done = trace_steps.len() as u64;
        if done.is_multiple_of(every) && done < steps {
            write_checkpoint(path, &engine, field, &trace_steps, steps)?;
        }
    }
    let trace = InvasionTrace {
        seed: field.seed_id(),
        initial_checked: engine.initial_checked().to_vec(),
        steps: trace_steps,
        fingerprint: engine.fingerprint(),
        outcome: TraceOutcome { rule: StopRule::Steps(steps), marker_step: 0, certified: false },
    };
    let _ = std::fs::remove_file(path);
    Ok(Some(trace))
}

fn write_checkpoint<W: WeightSource>(
    path: &Path,
    engine: &Invasion<W>,
    field: &W,
    steps_so_far: &[TraceStep],
    target: u64,
) -> Result<()> {
    let partial = InvasionTrace {
        seed: field.seed_id(),
        initial_checked: engine.initial_checked().to_vec(),
        steps: steps_so_far.to_vec(),
        fingerprint: engine.fingerprint(),
        outcome: TraceOutcome { rule: StopRule::Steps(target), marker_step: 0, certified: false },
    };
    let snap = engine.snapshot();
    let mut buf = Vec::with_capacity(16 + snap.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(snap.len() as u32).to_le_bytes());
    buf.extend_from_slice(&snap);
    buf.extend_from_slice(&partial.to_bytes());
    // Write-then-rename so a crash mid-write never leaves a torn file.
    let mut tmp_os = path.as_os_str().to_owned();
    tmp_os.push(".tmp");
    let tmp = PathBuf::from(tmp_os);
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn split_checkpoint(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let malformed = |msg: &str| Error::MalformedTrace(format!("checkpoint: {msg}"));
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic"));
    }
    let snap_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if rest.len() < snap_len {
        return Err(malformed("truncated engine state"));
    }
    Ok(rest.split_at(snap_len))
}

//! Monte Carlo estimators over independent weight fields: crossing
//! probabilities, the finite-size correlation length with its inverse
//! thresholds, point-to-boundary and four-arm probabilities.
//!
//! Every estimator draws trial `i` from `WeightField::new(trial_seed(seed0,
//! i))`, so results are reproducible bit for bit, independent of worker
//! count, and extendable by continuing the index range.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::lattice::{neighbors, DualEdgeId, DualVertex, EdgeId, Rect, Vertex, ORIGIN};
use crate::percolation::{PercSample, Region};
use crate::weights::{trial_seed, WeightField, WeightSource, P_C};

/// Confidence multiplier for accept/reject decisions inside searches.
const DECISION_Z: f64 = 3.0;
/// Rounds of trial doubling before a threshold decision gives up on
/// statistical separation and falls back to the point estimate.
const MAX_DOUBLINGS: u32 = 3;
/// Largest box side the correlation-length search will probe.
const CORRLEN_MAX_N: u32 = 4096;
/// Brackets for the inverse correlation length stop at this width.
pub const PNQN_BRACKET_WIDTH: f64 = 1.0 / 4096.0;

/// A Monte Carlo estimate with enough bookkeeping to reproduce and merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub trials: u64,
    /// Standard error from the population variance: for indicator
    /// estimands exactly sqrt(mean·(1−mean)/trials).
    pub std_error: f64,
    /// Base seed the trial sequence was derived from.
    pub seed0: u64,
    /// Half-open range of trial indices consumed from that sequence.
    pub seed_range: (u64, u64),
    /// Hash of the semantic parameters that produced the estimate.
    pub config_digest: String,
}

impl Estimate {
    pub fn from_indicator(
        successes: u64,
        trials: u64,
        seed0: u64,
        seed_range: (u64, u64),
        config_digest: String,
    ) -> Self {
        assert!(trials > 0 && successes <= trials);
        let mean = successes as f64 / trials as f64;
        let std_error = (mean * (1.0 - mean) / trials as f64).sqrt();
        Estimate { mean, trials, std_error, seed0, seed_range, config_digest }
    }

    /// Mean and population-variance standard error of raw per-trial values.
    pub fn from_values(
        values: &[f64],
        seed0: u64,
        seed_range: (u64, u64),
        config_digest: String,
    ) -> Self {
        assert!(!values.is_empty());
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        Estimate {
            mean,
            trials: values.len() as u64,
            std_error: (m2 / n).sqrt() / n.sqrt(),
            seed0,
            seed_range,
            config_digest,
        }
    }

    /// Sum of squared deviations, recovered from the standard error.
    fn m2(&self) -> f64 {
        let n = self.trials as f64;
        self.std_error * self.std_error * n * n
    }

    /// Pool with an estimate continuing the same trial sequence.  Exact:
    /// merging split halves reproduces the whole-sequence estimate.
    pub fn merge(&self, other: &Estimate) -> Result<Estimate> {
        if self.config_digest != other.config_digest || self.seed0 != other.seed0 {
            return Err(invalid("cannot merge estimates of different configurations"));
        }
        if self.seed_range.1 != other.seed_range.0 {
            return Err(invalid(format!(
                "trial ranges not contiguous: {:?} then {:?}",
                self.seed_range, other.seed_range
            )));
        }
        let (na, nb) = (self.trials as f64, other.trials as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n;
        let m2 = self.m2() + other.m2() + delta * delta * na * nb / n;
        Ok(Estimate {
            mean,
            trials: self.trials + other.trials,
            std_error: (m2 / n).sqrt() / n.sqrt(),
            seed0: self.seed0,
            seed_range: (self.seed_range.0, other.seed_range.1),
            config_digest: self.config_digest.clone(),
        })
    }
}

/// Digest of an estimator's semantic parameters: sha-256 of the canonical
/// JSON rendering (sorted keys), truncated to 16 hex digits.
pub fn config_digest(params: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(params.to_string().as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("threshold must lie in [0,1], got {p}")));
    }
    Ok(())
}

fn check_trials(trials: u64) -> Result<()> {
    if trials == 0 {
        return Err(invalid("trial count must be positive"));
    }
    Ok(())
}

/// Estimate the probability of a left-right open crossing of the rectangle
/// with corner vertices (0,0) and (n,m), at threshold `p`.
pub fn crossing_probability(n: i32, m: i32, p: f64, trials: u64, seed0: u64) -> Result<Estimate> {
    if n < 1 || m < 1 {
        return Err(invalid(format!("rectangle sides must be at least 1, got {n}x{m}")));
    }
    check_probability(p)?;
    check_trials(trials)?;
    let digest = config_digest(&json!({
        "op": "crossing", "n": n, "m": m, "p": p, "trials": trials, "seed0": seed0,
    }));
    let region = Region::Rect(Rect::new(0, 0, n, m));
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let field = WeightField::new(trial_seed(seed0, i));
            PercSample::from_field(&field, region, p).horizontal_crossing()
        })
        .count() as u64;
    Ok(Estimate::from_indicator(successes, trials, seed0, (0, trials), digest))
}

/// One CI-gated comparison of an unknown probability against a target.
/// Returns (is_below_target, decision_was_confident).  Doubles the trial
/// budget until the interval mean ± z·se clears the target or the doubling
/// cap is hit.
fn decide_below(
    mut estimate: impl FnMut(u64, u64) -> f64,
    target: f64,
    base_trials: u64,
    salt: u64,
) -> (bool, bool) {
    let mut trials = base_trials;
    let mut mean = 0.5;
    for round in 0..=MAX_DOUBLINGS {
        mean = estimate(trials, salt.wrapping_add(round as u64));
        let se = (mean * (1.0 - mean) / trials as f64).sqrt().max(f64::MIN_POSITIVE);
        if (mean - target).abs() > DECISION_Z * se {
            return (mean <= target, true);
        }
        trials *= 2;
    }
    (mean <= target, false)
}

/// The finite-size correlation length: the smallest box side where the
/// square crossing probability leaves `[eps, 1-eps]` on the subcritical
/// side appropriate to `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationLength {
    pub n: u32,
    /// All threshold comparisons along the search were CI-separated.
    pub confident: bool,
    /// The search hit its size cap before the criterion was met.
    pub censored: bool,
}

pub fn correlation_length(p: f64, eps: f64, trials: u64, seed0: u64) -> Result<CorrelationLength> {
    check_probability(p)?;
    check_trials(trials)?;
    if p == P_C {
        return Err(invalid("correlation length diverges at the critical threshold"));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(invalid(format!("tolerance must lie in (0, 1/2), got {eps}")));
    }
    let mut confident = true;
    // Reduced crossing value: small exactly when the box looks subcritical
    // from p's side of the transition.
    let reduced = |n: u32, trials: u64, salt: u64| -> f64 {
        let sigma = crossing_probability(n as i32, n as i32, p, trials, salt)
            .expect("validated parameters")
            .mean;
        if p < P_C {
            sigma
        } else {
            1.0 - sigma
        }
    };
    let below = |n: u32, confident: &mut bool| -> bool {
        let salt = trial_seed(seed0, 0x10_0000 + n as u64);
        let (is_below, conf) = decide_below(
            |t, s| reduced(n, t, s),
            eps,
            trials,
            salt,
        );
        *confident &= conf;
        is_below
    };
    // Doubling phase: find the first power of two satisfying the criterion.
    let mut hi = 1u32;
    while !below(hi, &mut confident) {
        if hi >= CORRLEN_MAX_N {
            return Ok(CorrelationLength { n: hi, confident: false, censored: true });
        }
        hi *= 2;
    }
    if hi == 1 {
        return Ok(CorrelationLength { n: 1, confident, censored: false });
    }
    // Bisection phase: smallest n in (hi/2, hi] satisfying it.
    let mut lo = hi / 2; // known to fail
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if below(mid, &mut confident) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CorrelationLength { n: hi, confident, censored: false })
}

/// Bracketing intervals for the two thresholds where the scale-n crossing
/// probability crosses `1-eps` (above critical) and `eps` (below).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnQn {
    pub p_bracket: (f64, f64),
    pub q_bracket: (f64, f64),
    /// Both brackets were narrowed to the target width with every decision
    /// CI-separated; otherwise the reported brackets are the widened,
    /// certified-only ones.
    pub confident: bool,
}

impl PnQn {
    pub fn p(&self) -> f64 {
        0.5 * (self.p_bracket.0 + self.p_bracket.1)
    }

    pub fn q(&self) -> f64 {
        0.5 * (self.q_bracket.0 + self.q_bracket.1)
    }
}

pub fn pn_qn(n: i32, eps: f64, trials: u64, seed0: u64) -> Result<PnQn> {
    if n < 1 {
        return Err(invalid(format!("scale must be at least 1, got {n}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(invalid(format!("tolerance must lie in (0, 1/2), got {eps}")));
    }
    check_trials(trials)?;
    // sigma(n,n,p) rises in p; find where it crosses `target` inside
    // [lo, hi].  Certified ends move only on confident decisions.
    let solve = |target: f64, lo0: f64, hi0: f64, salt0: u64| -> ((f64, f64), bool) {
        let (mut lo, mut hi) = (lo0, hi0);
        let (mut clo, mut chi) = (lo0, hi0);
        let mut all_confident = true;
        let mut step = 0u64;
        while hi - lo > PNQN_BRACKET_WIDTH {
            step += 1;
            let mid = 0.5 * (lo + hi);
            let salt = trial_seed(seed0, salt0 ^ (step << 8));
            let (below, conf) = decide_below(
                |t, s| {
                    crossing_probability(n, n, mid, t, s)
                        .expect("validated parameters")
                        .mean
                },
                target,
                trials,
                salt,
            );
            if below {
                lo = mid;
                if conf {
                    clo = clo.max(mid);
                }
            } else {
                hi = mid;
                if conf {
                    chi = chi.min(mid);
                }
            }
            all_confident &= conf;
        }
        if all_confident {
            ((lo, hi), true)
        } else {
            ((clo, chi), false)
        }
    };
    let (p_bracket, p_conf) = solve(1.0 - eps, P_C, 1.0, 0x20_0000);
    let (q_bracket, q_conf) = solve(eps, 0.0, P_C, 0x30_0000);
    Ok(PnQn { p_bracket, q_bracket, confident: p_conf && q_conf })
}

/// Estimate the probability that the origin is joined to the boundary of
/// B(n) by an open path at threshold `p`.
pub fn point_to_boundary(p: f64, n: i32, trials: u64, seed0: u64) -> Result<Estimate> {
    if n < 1 {
        return Err(invalid(format!("box radius must be at least 1, got {n}")));
    }
    check_probability(p)?;
    check_trials(trials)?;
    let digest = config_digest(&json!({
        "op": "point_to_boundary", "p": p, "n": n, "trials": trials, "seed0": seed0,
    }));
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let field = WeightField::new(trial_seed(seed0, i));
            origin_to_boundary(&field, p, n)
        })
        .count() as u64;
    Ok(Estimate::from_indicator(successes, trials, seed0, (0, trials), digest))
}

/// BFS from the origin over p-open edges inside B(n), stopping at the
/// boundary ring.
pub(crate) fn origin_to_boundary<W: WeightSource>(field: &W, p: f64, n: i32) -> bool {
    open_arm(field, p, n, ORIGIN, None)
}

/// BFS from `start` over p-open edges of B(n), skipping `skip`, true when
/// the boundary ring is reached.
fn open_arm<W: WeightSource>(
    field: &W,
    p: f64,
    n: i32,
    start: Vertex,
    skip: Option<EdgeId>,
) -> bool {
    if start.norm() >= n {
        return true;
    }
    let mut seen: HashSet<Vertex> = [start].into();
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for (e, w) in neighbors(v) {
            if Some(e) == skip || w.norm() > n || field.weight(e) > p {
                continue;
            }
            if w.norm() == n {
                return true;
            }
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    false
}

/// BFS from `start` over closed dual edges with faces inside the dual
/// band of B(n) (rings up to n-1), skipping `skip`, true when the
/// outermost face ring is reached.
fn closed_dual_arm<W: WeightSource>(
    field: &W,
    p: f64,
    n: i32,
    start: DualVertex,
    skip: DualEdgeId,
) -> bool {
    let target = n - 1;
    if start.ring() >= target {
        return true;
    }
    let mut seen: HashSet<DualVertex> = [start].into();
    let mut stack = vec![start];
    while let Some(dv) = stack.pop() {
        for (de, next) in dv.neighbors() {
            if de == skip || next.ring() > target || field.weight(de.primal) <= p {
                continue;
            }
            if next.ring() == target {
                return true;
            }
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    false
}

/// The alternating four-arm event at the central edge e = {(0,0),(1,0)} at
/// the critical threshold: both endpoints reach the boundary of B(n) by
/// open paths avoiding e, and both faces beside e reach the outermost face
/// ring by closed dual paths avoiding the dual of e.
pub fn four_arm_event<W: WeightSource>(field: &W, n: i32) -> bool {
    let e = EdgeId::horizontal(ORIGIN);
    let (da, db) = e.dual().endpoints();
    open_arm(field, P_C, n, Vertex::new(0, 0), Some(e))
        && open_arm(field, P_C, n, Vertex::new(1, 0), Some(e))
        && closed_dual_arm(field, P_C, n, da, e.dual())
        && closed_dual_arm(field, P_C, n, db, e.dual())
}

/// Estimate the four-arm probability at scale n.
pub fn four_arm_probability(n: i32, trials: u64, seed0: u64) -> Result<Estimate> {
    if n < 2 {
        return Err(invalid(format!("four-arm scale must be at least 2, got {n}")));
    }
    check_trials(trials)?;
    let digest = config_digest(&json!({
        "op": "four_arm", "n": n, "trials": trials, "seed0": seed0,
    }));
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let field = WeightField::new(trial_seed(seed0, i));
            four_arm_event(&field, n)
        })
        .count() as u64;
    Ok(Estimate::from_indicator(successes, trials, seed0, (0, trials), digest))
}

//! Measurements on invasion runs and the surrounding static configuration:
//! weight-binned acceptance ratios, checked-edge bookkeeping, radii and
//! stabilization certificates, outlets, in-box edge counts, and cluster
//! counts outside a box.
//!
//! Detectors for composite circuit-and-connection events live in the
//! [`events`] submodule and share the same primitives.

pub mod events;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{invalid, Result};
use crate::invasion::{Invasion, InvasionTrace};
use crate::lattice::{Annulus, EdgeId, Rect};
use crate::percolation::circuits::{circuit_vertices, ring_vertices};
use crate::percolation::reach_in_rect;
use crate::weights::{mix64, trial_seed, Mix64Stream, WeightField, WeightSource, P_C};

/// Weight histogram of one invasion run: per-bin counts of invaded edges
/// (`q_counts`) and of all checked edges (`p_counts`) after `n` steps.
///
/// Bins partition `[0, 1]`: bin `b` covers `(bin_edges[b], bin_edges[b+1]]`,
/// except the first bin which is closed on the left so that weight zero is
/// counted.  Every weight lands in exactly one bin, so the per-bin invaded
/// counts sum to `n` and the checked counts sum to the checked total `L_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedProfile {
    pub bin_edges: Vec<f64>,
    pub q_counts: Vec<u64>,
    pub p_counts: Vec<u64>,
    /// Step horizon of the run this histogram summarizes.
    pub n: u64,
}

/// Bin edges for `count` equal-width bins spanning `[0, 1]`.
pub fn uniform_bins(count: usize) -> Vec<f64> {
    assert!(count >= 1);
    (0..=count).map(|i| i as f64 / count as f64).collect()
}

impl BinnedProfile {
    /// Empty histogram over the given edges.  The edges must be strictly
    /// increasing and span exactly `[0, 1]` so that the counting
    /// invariants can hold.
    pub fn new(bin_edges: Vec<f64>) -> Result<Self> {
        if bin_edges.len() < 2 {
            return Err(invalid("need at least two bin edges"));
        }
        if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("bin edges must be strictly increasing"));
        }
        if bin_edges[0] != 0.0 || *bin_edges.last().unwrap() != 1.0 {
            return Err(invalid("bin edges must span [0, 1]"));
        }
        let bins = bin_edges.len() - 1;
        Ok(BinnedProfile { bin_edges, q_counts: vec![0; bins], p_counts: vec![0; bins], n: 0 })
    }

    /// Run a fresh invasion of `n` steps on `field` and histogram it.
    pub fn from_run<W: WeightSource>(field: &W, n: u64, bin_edges: Vec<f64>) -> Result<Self> {
        let mut profile = BinnedProfile::new(bin_edges)?;
        let mut inv = Invasion::new(field);
        for &(_, w) in inv.initial_checked() {
            profile.record_checked(w);
        }
        for _ in 0..n {
            let (_, _, w) = inv.advance();
            profile.record_invaded(w);
            for &(_, wn) in inv.newly_checked() {
                profile.record_checked(wn);
            }
        }
        profile.n = n;
        debug_assert!(profile.verify());
        Ok(profile)
    }

    /// Histogram the first `n` steps of a recorded trace.
    pub fn from_trace(trace: &InvasionTrace, n: u64, bin_edges: Vec<f64>) -> Result<Self> {
        if n as usize > trace.len() {
            return Err(invalid(format!(
                "horizon {n} exceeds trace length {}",
                trace.len()
            )));
        }
        let mut profile = BinnedProfile::new(bin_edges)?;
        for &(_, w) in &trace.initial_checked {
            profile.record_checked(w);
        }
        for step in &trace.steps[..n as usize] {
            profile.record_invaded(step.weight);
            for &(_, wn) in &step.newly_checked {
                profile.record_checked(wn);
            }
        }
        profile.n = n;
        debug_assert!(profile.verify());
        Ok(profile)
    }

    fn bin_index(&self, w: f64) -> usize {
        let i = self.bin_edges.partition_point(|&e| e < w);
        i.saturating_sub(1).min(self.q_counts.len() - 1)
    }

    fn record_invaded(&mut self, w: f64) {
        let b = self.bin_index(w);
        self.q_counts[b] += 1;
    }

    fn record_checked(&mut self, w: f64) {
        let b = self.bin_index(w);
        self.p_counts[b] += 1;
    }

    /// Total checked count `L_n` (sum of `p_counts`).
    pub fn checked_total(&self) -> u64 {
        self.p_counts.iter().sum()
    }

    /// The counting invariants: invaded counts sum to `n`, invaded never
    /// exceeds checked in any bin.
    pub fn verify(&self) -> bool {
        self.q_counts.iter().sum::<u64>() == self.n
            && self.q_counts.iter().zip(&self.p_counts).all(|(q, p)| q <= p)
    }
}

/// One bin of an aggregated acceptance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lo: f64,
    pub hi: f64,
    /// Invaded-edge count summed over all trials.
    pub invaded: u64,
    /// Checked-edge count summed over all trials.
    pub checked: u64,
    /// Ratio of sums, or `None` when no trial checked a weight here — an
    /// explicitly undefined bin, never a silent zero.
    pub ratio: Option<f64>,
    /// Bootstrap percentile interval (2.5%–97.5%) for the ratio, when
    /// enough resamples had a nonzero denominator.
    pub ci: Option<(f64, f64)>,
}

/// Acceptance ratios per weight bin, aggregated over an ensemble of runs
/// with a common horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceProfile {
    pub n: u64,
    pub trials: u64,
    pub bins: Vec<ProfileBin>,
}

/// Resamples drawn for each bootstrap interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

const BOOTSTRAP_SALT: u64 = 0xb007_57a9_ac3e_u64;

impl AcceptanceProfile {
    /// The bin whose interval contains `x` (first bin includes its left
    /// edge).
    pub fn bin_at(&self, x: f64) -> Option<&ProfileBin> {
        self.bins
            .iter()
            .enumerate()
            .find(|(i, b)| (b.lo < x || (*i == 0 && x == b.lo)) && x <= b.hi)
            .map(|(_, b)| b)
    }

    /// Summed invaded and checked counts over all bins lying inside
    /// `[lo, hi]`.  Errors when no bin does.
    pub fn range_counts(&self, lo: f64, hi: f64) -> Result<(u64, u64)> {
        let mut any = false;
        let (mut q, mut p) = (0u64, 0u64);
        for b in &self.bins {
            if b.lo >= lo - 1e-12 && b.hi <= hi + 1e-12 {
                any = true;
                q += b.invaded;
                p += b.checked;
            }
        }
        if !any {
            return Err(invalid(format!("no profile bin inside [{lo}, {hi}]")));
        }
        Ok((q, p))
    }

    /// Ratio of sums over the bins inside `[lo, hi]`; `None` when nothing
    /// was checked there.
    pub fn range_ratio(&self, lo: f64, hi: f64) -> Result<Option<f64>> {
        let (q, p) = self.range_counts(lo, hi)?;
        Ok((p > 0).then(|| q as f64 / p as f64))
    }
}

/// Aggregate per-trial histograms into per-bin acceptance ratios.
///
/// Each bin reports the ratio of summed invaded counts to summed checked
/// counts across trials (the ratio-of-sums estimator), plus a percentile
/// bootstrap interval over trial resampling.  The resampling stream is a
/// fixed function of the horizon and trial count, so repeated aggregation
/// is bit-identical.
pub fn acceptance_profile(profiles: &[BinnedProfile]) -> Result<AcceptanceProfile> {
    let Some(first) = profiles.first() else {
        return Err(invalid("need at least one profile"));
    };
    if profiles.iter().any(|p| p.bin_edges != first.bin_edges || p.n != first.n) {
        return Err(invalid("profiles must share bin edges and horizon"));
    }
    let trials = profiles.len();
    let bins = first.q_counts.len();
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let invaded: u64 = profiles.iter().map(|p| p.q_counts[b]).sum();
        let checked: u64 = profiles.iter().map(|p| p.p_counts[b]).sum();
        out.push(ProfileBin {
            lo: first.bin_edges[b],
            hi: first.bin_edges[b + 1],
            invaded,
            checked,
            ratio: (checked > 0).then(|| invaded as f64 / checked as f64),
            ci: None,
        });
    }
    // Percentile bootstrap over trials, one shared resample per replicate.
    let mut stream = Mix64Stream::new(BOOTSTRAP_SALT ^ mix64(first.n ^ trials as u64));
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let mut q_sum = vec![0u64; bins];
    let mut p_sum = vec![0u64; bins];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        q_sum.fill(0);
        p_sum.fill(0);
        for _ in 0..trials {
            let t = stream.next_below(trials as u64) as usize;
            for b in 0..bins {
                q_sum[b] += profiles[t].q_counts[b];
                p_sum[b] += profiles[t].p_counts[b];
            }
        }
        for b in 0..bins {
            if p_sum[b] > 0 {
                ratios[b].push(q_sum[b] as f64 / p_sum[b] as f64);
            }
        }
    }
    for (b, vals) in ratios.iter_mut().enumerate() {
        if out[b].ratio.is_none() || vals.len() < BOOTSTRAP_RESAMPLES / 2 {
            continue;
        }
        vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = vals[vals.len() / 40];
        let hi = vals[vals.len() * 39 / 40 - 1];
        out[b].ci = Some((lo, hi));
    }
    Ok(AcceptanceProfile { n: first.n, trials: trials as u64, bins: out })
}

/// Checked-edge count at or below a weight cutoff, with the checked total,
/// after `n` steps of a trace.
pub fn checked_count_below(trace: &InvasionTrace, n: u64, x: f64) -> Result<(u64, u64)> {
    if n as usize > trace.len() {
        return Err(invalid(format!("horizon {n} exceeds trace length {}", trace.len())));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("cutoff must lie in [0,1], got {x}")));
    }
    let mut below = trace.initial_checked.iter().filter(|&&(_, w)| w <= x).count() as u64;
    for step in &trace.steps[..n as usize] {
        below += step.newly_checked.iter().filter(|&&(_, w)| w <= x).count() as u64;
    }
    Ok((below, trace.checked_after(n as usize)))
}

/// Outcome of the mean-zero test for the checked-count identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub x: f64,
    pub n: u64,
    pub trials: u64,
    /// Mean over trials of (checked count at or below `x`) − `x · L_n`.
    pub mean_diff: f64,
    pub std_error: f64,
    pub z: f64,
}

impl IdentityReport {
    /// The identity holds within noise.
    pub fn passes(&self) -> bool {
        self.z.abs() < 4.0
    }
}

/// Test that the expected number of checked edges with weight at most `x`
/// equals `x` times the expected checked total, by running `trials` fresh
/// invasions of `n` steps and z-scoring the mean difference.
pub fn checked_identity_test(n: u64, x: f64, trials: u64, seed0: u64) -> Result<IdentityReport> {
    if n == 0 || trials < 2 {
        return Err(invalid("need n >= 1 and at least two trials"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("cutoff must lie in [0,1], got {x}")));
    }
    let diffs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let field = WeightField::new(trial_seed(seed0, i));
            let mut inv = Invasion::new(&field);
            let mut below = inv.initial_checked().iter().filter(|&&(_, w)| w <= x).count() as u64;
            for _ in 0..n {
                inv.advance();
                below += inv.newly_checked().iter().filter(|&&(_, w)| w <= x).count() as u64;
            }
            below as f64 - x * inv.checked_total() as f64
        })
        .collect();
    let t = trials as f64;
    let mean = diffs.iter().sum::<f64>() / t;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (t - 1.0);
    let se = (var / t).sqrt();
    let z = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY * mean.signum()
    };
    Ok(IdentityReport { x, n, trials, mean_diff: mean, std_error: se, z })
}

/// Number of edges checked but not invaded within the first `n` steps
/// whose weight lies in `(1/2, 1/2 + eps]`.
pub fn xi_count(trace: &InvasionTrace, eps: f64, n: u64) -> Result<u64> {
    if eps <= 0.0 {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if n as usize > trace.len() {
        return Err(invalid(format!("horizon {n} exceeds trace length {}", trace.len())));
    }
    let invaded: HashSet<u64> =
        trace.steps[..n as usize].iter().map(|s| s.edge.code()).collect();
    let in_window = |w: f64| P_C < w && w <= P_C + eps;
    let mut count = trace
        .initial_checked
        .iter()
        .filter(|&&(e, w)| in_window(w) && !invaded.contains(&e.code()))
        .count() as u64;
    for step in &trace.steps[..n as usize] {
        count += step
            .newly_checked
            .iter()
            .filter(|&&(e, w)| in_window(w) && !invaded.contains(&e.code()))
            .count() as u64;
    }
    Ok(count)
}

/// Smallest box radius containing the first `n` invaded edges.
pub fn radius(trace: &InvasionTrace, n: u64) -> Result<i32> {
    if n as usize > trace.len() {
        return Err(invalid(format!("horizon {n} exceeds trace length {}", trace.len())));
    }
    Ok(trace.steps[..n as usize].iter().map(|s| s.edge.norm()).max().unwrap_or(0))
}

/// Certificate that the invasion leaves a box alone after a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilizationResult {
    /// Largest radius whose box no invaded edge touched in steps
    /// `(n, horizon]`; −1 when even the origin box was touched.
    pub k: i32,
    /// Last step at or before `n` that touched that box (0 when only the
    /// initial configuration did).
    pub stabilized_at: u64,
    /// The horizon was too short to certify: either there was no slack
    /// beyond step `n` in the first half, or the second half of the run
    /// touched a smaller box than the first half had, so the bound was
    /// still moving.
    pub censored: bool,
    pub horizon: u64,
}

/// Run `horizon_factor · n` steps and report the largest box untouched
/// after step `n`.
///
/// An invaded edge touches `B(k)` when either endpoint lies in it.  The
/// reported `k` is exact for the window `(n, horizon]` and is an upper
/// bound for the infinite-time stabilization radius; it can only shrink as
/// the horizon grows.  The certificate compares the two halves of the
/// window: if the second half touched a smaller box than the first, the
/// estimate had not settled and the result is censored.
pub fn stabilization_radius<W: WeightSource>(
    field: &W,
    n: u64,
    horizon_factor: u64,
) -> Result<StabilizationResult> {
    if n == 0 {
        return Err(invalid("step horizon must be positive"));
    }
    if horizon_factor < 2 {
        return Err(invalid(format!("horizon factor must be at least 2, got {horizon_factor}")));
    }
    let horizon = n
        .checked_mul(horizon_factor)
        .ok_or_else(|| invalid("horizon overflows"))?;
    let half = horizon / 2;
    let mut inv = Invasion::new(field);
    let mut prefix_inner = Vec::with_capacity(n as usize);
    let mut first_min = i32::MAX;
    let mut second_min = i32::MAX;
    for j in 1..=horizon {
        let (_, edge, _) = inv.advance();
        let inner = edge.inner_norm();
        if j <= n {
            prefix_inner.push(inner);
        } else if j <= half {
            first_min = first_min.min(inner);
        } else {
            second_min = second_min.min(inner);
        }
    }
    let window_min = first_min.min(second_min);
    debug_assert!(window_min < i32::MAX);
    let k = window_min - 1;
    let stabilized_at = prefix_inner
        .iter()
        .rposition(|&inner| inner <= k)
        .map(|i| i as u64 + 1)
        .unwrap_or(0);
    let censored = half <= n || second_min < first_min;
    Ok(StabilizationResult { k, stabilized_at, censored, horizon })
}

/// An invaded edge whose weight exceeds every later invaded weight in the
/// trace, and exceeds 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutletRecord {
    /// 1-based invasion step.
    pub step: u64,
    pub edge: EdgeId,
    pub weight: f64,
}

/// All outlets of a finite trace, in step order, by one backward
/// suffix-maximum sweep.
pub fn detect_outlets(trace: &InvasionTrace) -> Vec<OutletRecord> {
    let mut out = Vec::new();
    let mut suffix_max = f64::NEG_INFINITY;
    for step in trace.steps.iter().rev() {
        if step.weight > suffix_max && step.weight > P_C {
            out.push(OutletRecord { step: step.index, edge: step.edge, weight: step.weight });
        }
        suffix_max = suffix_max.max(step.weight);
    }
    out.reverse();
    out
}

/// Invaded-edge counts inside a box, with a quiet-half certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxCounts {
    /// Invaded edges with both endpoints in the box.
    pub s: u64,
    /// Those whose weight lies in `(1/2, 1/2 + eps]`.
    pub y: u64,
    /// The last step touching the box sits in the first half of the
    /// trace, so the counts have a whole quiet half-run behind them.
    pub certified: bool,
}

/// Count invaded edges inside `B(n)` over the whole trace, flagging
/// whether the counts can still grow.
pub fn box_counts(trace: &InvasionTrace, n: i32, eps: f64) -> Result<BoxCounts> {
    if n < 0 || eps < 0.0 {
        return Err(invalid("box radius and eps must be nonnegative"));
    }
    if trace.is_empty() {
        return Err(invalid("trace has no steps"));
    }
    let mut s = 0;
    let mut y = 0;
    let mut last_touch = 0u64;
    for step in &trace.steps {
        if step.edge.inner_norm() <= n {
            last_touch = step.index;
        }
        if step.edge.norm() <= n {
            s += 1;
            if P_C < step.weight && step.weight <= P_C + eps {
                y += 1;
            }
        }
    }
    Ok(BoxCounts { s, y, certified: 2 * last_touch <= trace.len() as u64 })
}

/// Edges inside `Ann(2n, 4n)` with weight above 1/2 whose endpoint is
/// joined to the boundary of `B(n)` by a path of weight-at-most-`q` edges
/// inside `B(4n)`.
pub fn y_count<W: WeightSource>(field: &W, n: i32, q: f64) -> Result<u64> {
    if n < 1 {
        return Err(invalid(format!("scale must be at least 1, got {n}")));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(invalid(format!("threshold must lie in [0,1), got {q}")));
    }
    let rect = Rect::new(-4 * n, -4 * n, 4 * n, 4 * n);
    let reach = reach_in_rect(rect, ring_vertices(n), |e| field.weight(e) <= q);
    let ann = Annulus::new(2 * n, 4 * n);
    let mut count = 0;
    for e in rect.edges() {
        if !ann.contains_edge(e) || field.weight(e) <= P_C {
            continue;
        }
        let (a, b) = e.endpoints();
        if reach[rect.vertex_index(a)] || reach[rect.vertex_index(b)] {
            count += 1;
        }
    }
    Ok(count)
}

/// Edges with weight below 1/2, both endpoints outside `B(inner)`, in the
/// half-open cluster of the given circuit: joined to a circuit vertex by
/// weight-at-most-1/2 edges inside `B(m_truncate)`.
pub fn z_cluster_count<W: WeightSource>(
    field: &W,
    circuit: &[EdgeId],
    inner: i32,
    m_truncate: i32,
) -> Result<u64> {
    if circuit.is_empty() {
        return Err(invalid("circuit must be nonempty"));
    }
    if inner < 0 || m_truncate <= inner {
        return Err(invalid("need 0 <= inner < m_truncate"));
    }
    let rect = Rect::new(-m_truncate, -m_truncate, m_truncate, m_truncate);
    let verts = circuit_vertices(circuit);
    if verts.iter().any(|v| !rect.contains_vertex(*v)) {
        return Err(invalid("circuit leaves the truncation box"));
    }
    let reach = reach_in_rect(rect, verts, |e| field.weight(e) <= P_C);
    let mut count = 0;
    for e in rect.edges() {
        if e.inner_norm() <= inner || field.weight(e) >= P_C {
            continue;
        }
        // The edge is open, so its endpoints are in the same cluster.
        let (a, _) = e.endpoints();
        if reach[rect.vertex_index(a)] {
            count += 1;
        }
    }
    Ok(count)
}

/// Vertices of `Ann(2^ell · n, 2^(ell+1) · n)` joined to the boundary of
/// `B(16n)` by weight-at-most-1/2 edges, searching inside the outer box.
pub fn z_annulus_count<W: WeightSource>(field: &W, n: i32, ell: u32) -> Result<u64> {
    if n < 1 {
        return Err(invalid(format!("scale must be at least 1, got {n}")));
    }
    if ell < 5 {
        return Err(invalid(format!("annulus exponent must be at least 5, got {ell}")));
    }
    let inner = (n as i64) << ell;
    let outer = inner * 2;
    if outer > 4096 {
        return Err(invalid(format!("outer radius {outer} exceeds the supported 4096")));
    }
    let (inner, outer) = (inner as i32, outer as i32);
    let rect = Rect::new(-outer, -outer, outer, outer);
    let reach = reach_in_rect(rect, ring_vertices(16 * n), |e| field.weight(e) <= P_C);
    let mut count = 0;
    for v in rect.vertices() {
        let r = v.norm();
        if inner < r && r <= outer && reach[rect.vertex_index(v)] {
            count += 1;
        }
    }
    Ok(count)
}

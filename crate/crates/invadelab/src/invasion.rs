//! The invasion engine: grow a cluster from the origin by repeatedly adding
//! the cheapest edge on its outer boundary.
//!
//! Terminology used throughout the crate:
//! - a *step* invades exactly one edge; step `n` produces the cluster `G_n`;
//! - an edge is *checked* once its weight has been looked at, i.e. once it
//!   has appeared on the boundary of the growing cluster.  Checked edges
//!   never become unchecked: the frontier only gains entries, and invading
//!   an edge moves it from the frontier into the cluster.
//! - `L_n` denotes the number of checked edges after step `n` (invaded plus
//!   frontier).  Step 0 checks the four edges at the origin, so `L_0 = 4`.
//!
//! The engine keeps the frontier in a binary heap keyed by
//! `(weight bits, edge code)`.  Weights live in `[0, 1)`, where the IEEE-754
//! bit pattern orders exactly like the value, so the heap never compares
//! floats directly and ties (impossible for hashed weights, possible for
//! fixture maps) break deterministically by edge code.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::lattice::{neighbors, outer_boundary, EdgeId, Orientation, Vertex, ORIGIN};
use crate::weights::{mix64, WeightField, WeightSource};

/// When to stop growing the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop after exactly this many invasion steps.
    Steps(u64),
    /// Stop as soon as an invaded edge has an endpoint outside `B(r - 1)`,
    /// i.e. the cluster reaches sup-norm radius `r`.
    RadiusReached(i32),
    /// Run `horizon` steps and record the last step that touched the box
    /// `B(radius)`.  The run is *certified* quiet when that last touch sits
    /// in the first half of the horizon, giving the second half as an
    /// untouched buffer.
    BoxStabilized { radius: i32, horizon: u64 },
}

/// One invasion step: the edge taken and the frontier edges it revealed.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// 1-based step index.
    pub index: u64,
    /// The invaded edge.
    pub edge: EdgeId,
    /// Its weight.
    pub weight: f64,
    /// Edges checked for the first time by this step, in the deterministic
    /// E, N, W, S neighbor order around each newly reached vertex.
    pub newly_checked: Vec<(EdgeId, f64)>,
}

/// Why a run ended, plus the stabilization bookkeeping when requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOutcome {
    pub rule: StopRule,
    /// For `RadiusReached`: the step at which the radius was reached.
    /// For `BoxStabilized`: the last step that touched the watched box
    /// (0 when only the initial configuration did).
    pub marker_step: u64,
    /// `BoxStabilized` only: the quiet-half certificate held.
    pub certified: bool,
}

/// A complete record of a finite invasion run.
///
/// The trace is replayable: together with the weight source that produced
/// it, it determines the engine state after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct InvasionTrace {
    /// Identifier of the weight source (0 for fixture maps).
    pub seed: u64,
    /// The four origin edges checked at step 0, E, N, W, S.
    pub initial_checked: Vec<(EdgeId, f64)>,
    pub steps: Vec<TraceStep>,
    /// Order-sensitive hash of the whole run; equal fingerprints mean
    /// bit-identical runs.
    pub fingerprint: u64,
    pub outcome: TraceOutcome,
}

const FINGERPRINT_SALT: u64 = 0x1645_7b5f_0e1c_6d1b;

/// The incremental invasion engine.
///
/// Drive it with [`Invasion::advance`] (no allocation beyond internal
/// growth) or [`Invasion::advance_step`] (returns an owned [`TraceStep`]).
pub struct Invasion<'a, W: WeightSource> {
    field: &'a W,
    invaded_vertices: HashSet<Vertex>,
    invaded_edges: HashSet<EdgeId>,
    /// Min-heap over `(weight bits, edge code)`.
    frontier: BinaryHeap<Reverse<(u64, u64)>>,
    /// Codes of every checked edge (frontier plus invaded).
    checked: HashSet<u64>,
    step: u64,
    checked_total: u64,
    radius: i32,
    fingerprint: u64,
    initial_checked: Vec<(EdgeId, f64)>,
    scratch: Vec<(EdgeId, f64)>,
}

impl<'a, W: WeightSource> Invasion<'a, W> {
    /// Fresh engine: origin invaded, its four edges checked (step 0).
    pub fn new(field: &'a W) -> Self {
        let mut inv = Invasion {
            field,
            invaded_vertices: HashSet::new(),
            invaded_edges: HashSet::new(),
            frontier: BinaryHeap::new(),
            checked: HashSet::new(),
            step: 0,
            checked_total: 0,
            radius: 0,
            fingerprint: mix64(field.seed_id() ^ FINGERPRINT_SALT),
            initial_checked: Vec::with_capacity(4),
            scratch: Vec::new(),
        };
        inv.invaded_vertices.insert(ORIGIN);
        for (edge, _) in neighbors(ORIGIN) {
            let code = edge.code();
            let weight = field.weight(edge);
            inv.checked.insert(code);
            inv.frontier.push(Reverse((weight.to_bits(), code)));
            inv.initial_checked.push((edge, weight));
            inv.checked_total += 1;
            inv.fingerprint = absorb(inv.fingerprint, code, weight.to_bits());
        }
        inv
    }

    /// Steps taken so far (`n`).
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Checked edges so far (`L_n`).
    pub fn checked_total(&self) -> u64 {
        self.checked_total
    }

    /// Sup-norm radius of the invaded vertex set.
    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn invaded_vertices(&self) -> &HashSet<Vertex> {
        &self.invaded_vertices
    }

    pub fn invaded_edges(&self) -> &HashSet<EdgeId> {
        &self.invaded_edges
    }

    /// Edges checked for the first time by the most recent step.
    pub fn newly_checked(&self) -> &[(EdgeId, f64)] {
        &self.scratch
    }

    /// The four origin edges checked at step 0, in E, N, W, S order.
    pub fn initial_checked(&self) -> &[(EdgeId, f64)] {
        &self.initial_checked
    }

    /// Smallest frontier weight, if any edge is on the frontier.
    pub fn frontier_min(&self) -> Option<f64> {
        self.frontier.peek().map(|Reverse((bits, _))| f64::from_bits(*bits))
    }

    /// Invade the cheapest frontier edge and reveal its new neighbors.
    ///
    /// Returns `(index, edge, weight)`; the revealed edges are available
    /// through [`Invasion::newly_checked`] until the next call.
    pub fn advance(&mut self) -> (u64, EdgeId, f64) {
        let Reverse((bits, code)) = self
            .frontier
            .pop()
            .expect("frontier is never empty on the infinite lattice");
        let edge = EdgeId::from_code(code);
        let weight = f64::from_bits(bits);
        self.step += 1;
        self.invaded_edges.insert(edge);
        self.radius = self.radius.max(edge.norm());
        self.fingerprint = absorb(self.fingerprint, code, bits);
        self.scratch.clear();
        let (a, b) = edge.endpoints();
        for v in [a, b] {
            if self.invaded_vertices.insert(v) {
                for (next, _) in neighbors(v) {
                    let next_code = next.code();
                    if self.checked.insert(next_code) {
                        let w = self.field.weight(next);
                        self.frontier.push(Reverse((w.to_bits(), next_code)));
                        self.scratch.push((next, w));
                        self.checked_total += 1;
                    }
                }
            }
        }
        (self.step, edge, weight)
    }

    /// [`Invasion::advance`], packaged as an owned step record.
    pub fn advance_step(&mut self) -> TraceStep {
        let (index, edge, weight) = self.advance();
        TraceStep { index, edge, weight, newly_checked: self.scratch.clone() }
    }

    /// Recompute the frontier from scratch and compare with the incremental
    /// bookkeeping.  Used by tests and the periodic self-checks.
    pub fn verify_frontier(&self) -> bool {
        let expected = outer_boundary(&self.invaded_vertices, &self.invaded_edges);
        let expected_codes: HashSet<u64> = expected.iter().map(|e| e.code()).collect();
        let actual_codes: HashSet<u64> =
            self.frontier.iter().map(|Reverse((_, code))| *code).collect();
        actual_codes == expected_codes
            && self.frontier.len() == expected.len()
            && self.checked_total as usize == self.checked.len()
            && self.checked.len() == self.invaded_edges.len() + self.frontier.len()
    }

    /// Serialize the full engine state to a canonical byte string.
    ///
    /// Equal states produce equal bytes: all set-valued fields are sorted
    /// before writing, so the snapshot is independent of hash-map iteration
    /// order and suitable for checkpoint files and determinism checks.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        put_u16(&mut buf, SNAPSHOT_VERSION);
        put_u64(&mut buf, self.field.seed_id());
        put_u64(&mut buf, self.step);
        put_u64(&mut buf, self.checked_total);
        put_u32(&mut buf, self.radius as u32);
        put_u64(&mut buf, self.fingerprint);
        put_u32(&mut buf, self.initial_checked.len() as u32);
        for (edge, weight) in &self.initial_checked {
            put_u64(&mut buf, edge.code());
            put_u64(&mut buf, weight.to_bits());
        }
        let mut invaded: Vec<u64> = self.invaded_edges.iter().map(|e| e.code()).collect();
        invaded.sort_unstable();
        put_u64(&mut buf, invaded.len() as u64);
        for code in invaded {
            put_u64(&mut buf, code);
        }
        let mut frontier: Vec<(u64, u64)> =
            self.frontier.iter().map(|Reverse(pair)| *pair).collect();
        frontier.sort_unstable();
        put_u64(&mut buf, frontier.len() as u64);
        for (bits, code) in frontier {
            put_u64(&mut buf, bits);
            put_u64(&mut buf, code);
        }
        buf
    }

    /// Rebuild an engine from [`Invasion::snapshot`] bytes.
    ///
    /// The caller must supply the same weight source that produced the
    /// snapshot; the stored seed id guards against mixups.
    pub fn restore(field: &'a W, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(SNAPSHOT_MAGIC)?;
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(invalid(format!("unsupported snapshot version {version}")));
        }
        let seed = r.u64()?;
        if seed != field.seed_id() {
            return Err(invalid(format!(
                "snapshot was taken with seed {seed:#x}, not {:#x}",
                field.seed_id()
            )));
        }
        let step = r.u64()?;
        let checked_total = r.u64()?;
        let radius = r.u32()? as i32;
        let fingerprint = r.u64()?;
        let n_initial = r.u32()? as usize;
        if n_initial != 4 {
            return Err(invalid(format!("snapshot has {n_initial} initial edges, expected 4")));
        }
        let mut initial_checked = Vec::with_capacity(4);
        for _ in 0..4 {
            let edge = EdgeId::from_code(r.u64()?);
            let weight = f64::from_bits(r.u64()?);
            initial_checked.push((edge, weight));
        }
        let n_invaded = r.u64()? as usize;
        let mut invaded_edges = HashSet::with_capacity(n_invaded);
        let mut invaded_vertices = HashSet::with_capacity(n_invaded + 1);
        let mut checked = HashSet::with_capacity(checked_total as usize);
        invaded_vertices.insert(ORIGIN);
        for _ in 0..n_invaded {
            let code = r.u64()?;
            let edge = EdgeId::from_code(code);
            invaded_edges.insert(edge);
            checked.insert(code);
            let (a, b) = edge.endpoints();
            invaded_vertices.insert(a);
            invaded_vertices.insert(b);
        }
        let n_frontier = r.u64()? as usize;
        let mut heap_entries = Vec::with_capacity(n_frontier);
        for _ in 0..n_frontier {
            let bits = r.u64()?;
            let code = r.u64()?;
            heap_entries.push(Reverse((bits, code)));
            checked.insert(code);
        }
        r.finish()?;
        if checked.len() as u64 != checked_total {
            return Err(invalid("snapshot checked-edge count does not match its sets"));
        }
        Ok(Invasion {
            field,
            invaded_vertices,
            invaded_edges,
            frontier: BinaryHeap::from(heap_entries),
            checked,
            step,
            checked_total,
            radius,
            fingerprint,
            initial_checked,
            scratch: Vec::new(),
        })
    }
}

fn absorb(hash: u64, code: u64, bits: u64) -> u64 {
    mix64(mix64(hash ^ code) ^ bits)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"IVCK";
const SNAPSHOT_VERSION: u16 = 1;
const TRACE_MAGIC: &[u8; 4] = b"IVTR";
const TRACE_VERSION: u16 = 1;

/// Run a fresh invasion under `stop` and collect the full trace.
pub fn invade_until<W: WeightSource>(field: &W, stop: StopRule) -> InvasionTrace {
    let mut engine = Invasion::new(field);
    let mut steps = Vec::new();
    let mut marker_step = 0u64;
    let mut certified = false;
    match stop {
        StopRule::Steps(n) => {
            steps.reserve(n.min(1 << 24) as usize);
            for _ in 0..n {
                steps.push(engine.advance_step());
            }
        }
        StopRule::RadiusReached(r) => {
            assert!(r >= 1, "radius target must be at least 1");
            while engine.radius() < r {
                steps.push(engine.advance_step());
            }
            marker_step = engine.step_count();
        }
        StopRule::BoxStabilized { radius, horizon } => {
            assert!(radius >= 1, "watched box radius must be at least 1");
            for _ in 0..horizon {
                let step = engine.advance_step();
                if step.edge.inner_norm() <= radius {
                    marker_step = step.index;
                }
                steps.push(step);
            }
            certified = 2 * marker_step <= horizon;
        }
    }
    InvasionTrace {
        seed: field.seed_id(),
        initial_checked: engine.initial_checked.clone(),
        steps,
        fingerprint: engine.fingerprint(),
        outcome: TraceOutcome { rule: stop, marker_step, certified },
    }
}

impl InvasionTrace {
    /// Number of invasion steps recorded.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `L_n` for `0 <= n <= len()`: checked edges after step `n`.
    pub fn checked_after(&self, n: usize) -> u64 {
        assert!(n <= self.steps.len(), "step {n} beyond trace length {}", self.steps.len());
        4 + self.steps[..n].iter().map(|s| s.newly_checked.len() as u64).sum::<u64>()
    }

    /// Weights of the invaded edges, in step order.
    pub fn invaded_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.weight)
    }

    /// Replay the trace against `field` and confirm the engine reproduces
    /// every invaded edge, weight, and newly-checked list.
    pub fn verify_replay<W: WeightSource>(&self, field: &W) -> bool {
        let mut engine = Invasion::new(field);
        if engine.initial_checked != self.initial_checked {
            return false;
        }
        for step in &self.steps {
            let (index, edge, weight) = engine.advance();
            if index != step.index
                || edge != step.edge
                || weight.to_bits() != step.weight.to_bits()
                || engine.newly_checked() != step.newly_checked.as_slice()
            {
                return false;
            }
        }
        engine.fingerprint() == self.fingerprint
    }

    /// Serialize to the compact binary trace format (magic `IVTR`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(TRACE_MAGIC);
        put_u16(&mut buf, TRACE_VERSION);
        put_u64(&mut buf, self.seed);
        put_u64(&mut buf, self.fingerprint);
        let (rule_tag, rule_a, rule_b) = match self.outcome.rule {
            StopRule::Steps(n) => (0u8, n, 0u64),
            StopRule::RadiusReached(r) => (1u8, r as u64, 0u64),
            StopRule::BoxStabilized { radius, horizon } => (2u8, radius as u64, horizon),
        };
        buf.push(rule_tag);
        put_u64(&mut buf, rule_a);
        put_u64(&mut buf, rule_b);
        put_u64(&mut buf, self.outcome.marker_step);
        buf.push(self.outcome.certified as u8);
        put_u32(&mut buf, self.initial_checked.len() as u32);
        for (edge, weight) in &self.initial_checked {
            put_u64(&mut buf, edge.code());
            put_u64(&mut buf, weight.to_bits());
        }
        put_u64(&mut buf, self.steps.len() as u64);
        for step in &self.steps {
            put_u64(&mut buf, step.edge.code());
            put_u64(&mut buf, step.weight.to_bits());
            put_u32(&mut buf, step.newly_checked.len() as u32);
            for (edge, weight) in &step.newly_checked {
                put_u64(&mut buf, edge.code());
                put_u64(&mut buf, weight.to_bits());
            }
        }
        buf
    }

    /// Parse the binary trace format written by [`InvasionTrace::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(TRACE_MAGIC)?;
        let version = r.u16()?;
        if version != TRACE_VERSION {
            return Err(invalid(format!("unsupported trace version {version}")));
        }
        let seed = r.u64()?;
        let fingerprint = r.u64()?;
        let rule_tag = r.u8()?;
        let rule_a = r.u64()?;
        let rule_b = r.u64()?;
        let rule = match rule_tag {
            0 => StopRule::Steps(rule_a),
            1 => StopRule::RadiusReached(rule_a as i32),
            2 => StopRule::BoxStabilized { radius: rule_a as i32, horizon: rule_b },
            other => return Err(invalid(format!("unknown stop-rule tag {other}"))),
        };
        let marker_step = r.u64()?;
        let certified = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(invalid(format!("bad certified flag {other}"))),
        };
        let n_initial = r.u32()? as usize;
        let mut initial_checked = Vec::with_capacity(n_initial);
        for _ in 0..n_initial {
            let edge = EdgeId::from_code(r.u64()?);
            let weight = f64::from_bits(r.u64()?);
            initial_checked.push((edge, weight));
        }
        let n_steps = r.u64()? as usize;
        let mut steps = Vec::with_capacity(n_steps.min(1 << 24));
        for i in 0..n_steps {
            let edge = EdgeId::from_code(r.u64()?);
            let weight = f64::from_bits(r.u64()?);
            let n_new = r.u32()? as usize;
            let mut newly_checked = Vec::with_capacity(n_new);
            for _ in 0..n_new {
                let e = EdgeId::from_code(r.u64()?);
                let w = f64::from_bits(r.u64()?);
                newly_checked.push((e, w));
            }
            steps.push(TraceStep { index: i as u64 + 1, edge, weight, newly_checked });
        }
        r.finish()?;
        Ok(InvasionTrace {
            seed,
            initial_checked,
            steps,
            fingerprint,
            outcome: TraceOutcome { rule, marker_step, certified },
        })
    }

    /// Render the step list as CSV with columns
    /// `index,x,y,orient,weight,n_new_checked`.
    ///
    /// `(x, y, orient)` identify the invaded edge by its base vertex and
    /// orientation (`H`/`V`).  Step 0 is implicit: it always checks the four
    /// origin edges and invades nothing, so rows start at index 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x,y,orient,weight,n_new_checked\n");
        for step in &self.steps {
            let orient = match step.edge.orient {
                Orientation::Horizontal => 'H',
                Orientation::Vertical => 'V',
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                step.index,
                step.edge.base.x,
                step.edge.base.y,
                orient,
                step.weight,
                step.newly_checked.len()
            );
        }
        out
    }
}

/// How a modified run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModifiedOutcome {
    /// First step whose invaded edge has an endpoint on the marked vertex
    /// set, if any.
    pub touched_at: Option<u64>,
    /// Step count at which the run froze: after touching, every frontier
    /// weight exceeded the threshold, so no admissible edge remained.
    pub frozen_at: Option<u64>,
    /// The step budget ran out before the run froze.
    pub censored: bool,
}

/// Invasion that switches to threshold-limited growth after reaching a
/// marked vertex set.
///
/// Until an invaded edge touches `marked`, the run is ordinary invasion.
/// From the first touch on, only frontier edges with weight at most
/// `threshold` may be invaded; when none qualifies the run freezes.  Because
/// the frontier minimum decides every step, the modified run invades, after
/// the touch, exactly the threshold-open part it can reach — checking a
/// too-heavy edge never helps it.
///
/// `max_steps` bounds the total work; hitting it before freezing sets
/// `censored`.
pub fn modified_invade<W: WeightSource>(
    field: &W,
    threshold: f64,
    marked: &HashSet<Vertex>,
    max_steps: u64,
) -> (InvasionTrace, ModifiedOutcome) {
    assert!((0.0..1.0).contains(&threshold) && threshold > 0.0);
    let threshold_bits = threshold.to_bits();
    let mut engine = Invasion::new(field);
    let mut steps = Vec::new();
    let mut touched_at = None;
    let mut frozen_at = None;
    while engine.step_count() < max_steps {
        if touched_at.is_some() {
            match engine.frontier.peek() {
                Some(Reverse((bits, _))) if *bits <= threshold_bits => {}
                _ => {
                    frozen_at = Some(engine.step_count());
                    break;
                }
            }
        }
        let step = engine.advance_step();
        if touched_at.is_none() {
            let (a, b) = step.edge.endpoints();
            if marked.contains(&a) || marked.contains(&b) {
                touched_at = Some(step.index);
            }
        }
        steps.push(step);
    }
    let censored = frozen_at.is_none();
    let trace = InvasionTrace {
        seed: field.seed_id(),
        initial_checked: engine.initial_checked.clone(),
        steps,
        fingerprint: engine.fingerprint(),
        outcome: TraceOutcome {
            rule: StopRule::Steps(max_steps),
            marker_step: frozen_at.unwrap_or(max_steps),
            certified: !censored,
        },
    };
    (trace, ModifiedOutcome { touched_at, frozen_at, censored })
}

/// [`modified_invade`] for a decomposed weight field, taking the threshold
/// from the field's own decomposition parameter.
pub fn modified_invade_decomposed(
    field: &WeightField,
    marked: &HashSet<Vertex>,
    max_steps: u64,
) -> Result<(InvasionTrace, ModifiedOutcome)> {
    let p = field.decomposition_p().ok_or_else(|| {
        Error::InvalidParameter(
            "modified invasion needs a field in decomposed mode; use WeightField::decomposed"
                .into(),
        )
    })?;
    Ok(modified_invade(field, p, marked, max_steps))
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Little-endian cursor over a byte slice with bounds-checked reads.
struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let slice = &self.data[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::MalformedTrace(format!(
                "truncated input: wanted {n} bytes at offset {}",
                self.pos
            ))),
        }
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::MalformedTrace(format!(
                "bad magic {:02x?}, expected {:02x?}",
                got, magic
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::MalformedTrace(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Vertex;
    use crate::weights::{MapField, WeightField};
    use std::collections::HashSet;

    fn star_fixture() -> MapField {
        // Explicit weights for the four origin edges; everything else 0.95.
        MapField::from_pairs(
            [
                (EdgeId::horizontal(ORIGIN), 0.7),                  // E
                (EdgeId::vertical(ORIGIN), 0.2),                    // N
                (EdgeId::horizontal(Vertex::new(-1, 0)), 0.9),      // W
                (EdgeId::vertical(Vertex::new(0, -1)), 0.5),        // S
            ],
            0.95,
        )
    }

    #[test]
    fn step_zero_checks_origin_star() {
        let field = star_fixture();
        let engine = Invasion::new(&field);
        assert_eq!(engine.step_count(), 0);
        assert_eq!(engine.checked_total(), 4);
        assert_eq!(engine.frontier_len(), 4);
        assert_eq!(engine.radius(), 0);
        let edges: Vec<EdgeId> = engine.initial_checked.iter().map(|(e, _)| *e).collect();
        assert_eq!(
            edges,
            vec![
                EdgeId::horizontal(ORIGIN),
                EdgeId::vertical(ORIGIN),
                EdgeId::horizontal(Vertex::new(-1, 0)),
                EdgeId::vertical(Vertex::new(0, -1)),
            ]
        );
    }

    #[test]
    fn first_step_takes_cheapest_and_reveals_three() {
        let field = star_fixture();
        let mut engine = Invasion::new(&field);
        let (index, edge, weight) = engine.advance();
        assert_eq!(index, 1);
        assert_eq!(edge, EdgeId::vertical(ORIGIN));
        assert_eq!(weight, 0.2);
        assert_eq!(engine.newly_checked().len(), 3);
        assert_eq!(engine.checked_total(), 7);
        assert_eq!(engine.frontier_len(), 6);
        assert_eq!(engine.radius(), 1);
        // The three new edges are the unchecked ones at (0, 1), E, N, W.
        let new: Vec<EdgeId> = engine.newly_checked().iter().map(|(e, _)| *e).collect();
        assert_eq!(
            new,
            vec![
                EdgeId::horizontal(Vertex::new(0, 1)),
                EdgeId::vertical(Vertex::new(0, 1)),
                EdgeId::horizontal(Vertex::new(-1, 1)),
            ]
        );
    }

    #[test]
    fn deterministic_tie_break_by_code() {
        // Two frontier edges with identical weights: the smaller code wins.
        let field = MapField::from_pairs(
            [
                (EdgeId::horizontal(ORIGIN), 0.3),
                (EdgeId::vertical(ORIGIN), 0.3),
            ],
            0.95,
        );
        let mut engine = Invasion::new(&field);
        let (_, edge, _) = engine.advance();
        let code_h = EdgeId::horizontal(ORIGIN).code();
        let code_v = EdgeId::vertical(ORIGIN).code();
        let expect = if code_h < code_v {
            EdgeId::horizontal(ORIGIN)
        } else {
            EdgeId::vertical(ORIGIN)
        };
        assert!(code_h != code_v);
        assert_eq!(edge, expect);
    }

    /// Reference implementation: recompute the outer boundary from scratch
    /// each step and scan it for the minimum `(weight, code)` pair.
    fn naive_next<W: WeightSource>(
        field: &W,
        vertices: &HashSet<Vertex>,
        edges: &HashSet<EdgeId>,
    ) -> (EdgeId, f64) {
        let boundary = outer_boundary(vertices, edges);
        boundary
            .into_iter()
            .map(|e| (e, field.weight(e)))
            .min_by_key(|(e, w)| (w.to_bits(), e.code()))
            .expect("nonempty boundary")
    }

    #[test]
    fn agrees_with_naive_rescan() {
        for seed in 0..10u64 {
            let field = WeightField::new(0x5eed_0000 + seed);
            let mut engine = Invasion::new(&field);
            let mut vertices: HashSet<Vertex> = [ORIGIN].into();
            let mut edges: HashSet<EdgeId> = HashSet::new();
            for _ in 0..300 {
                let (want_edge, want_weight) = naive_next(&field, &vertices, &edges);
                let (_, got_edge, got_weight) = engine.advance();
                assert_eq!(got_edge, want_edge);
                assert_eq!(got_weight.to_bits(), want_weight.to_bits());
                edges.insert(want_edge);
                let (a, b) = want_edge.endpoints();
                vertices.insert(a);
                vertices.insert(b);
            }
        }
    }

    #[test]
    fn frontier_matches_recomputation_periodically() {
        let field = WeightField::new(0xf407_1e55);
        let mut engine = Invasion::new(&field);
        for step in 1..=4096u64 {
            engine.advance();
            if step % 1024 == 0 {
                assert!(engine.verify_frontier(), "frontier drifted at step {step}");
            }
        }
    }

    #[test]
    fn checked_count_bounds() {
        let field = WeightField::new(77);
        let mut engine = Invasion::new(&field);
        for n in 1..=2000u64 {
            engine.advance();
            let l = engine.checked_total();
            assert_eq!(l, n + engine.frontier_len() as u64);
            assert!(l >= n);
            assert!(l <= 3 * n + 4);
            if n >= 4 {
                assert!(l <= 4 * n);
            }
        }
    }

    #[test]
    fn invade_until_steps_and_replay() {
        let field = WeightField::new(0xabcdef);
        let trace = invade_until(&field, StopRule::Steps(500));
        assert_eq!(trace.len(), 500);
        assert_eq!(trace.checked_after(0), 4);
        assert!(trace.verify_replay(&field));
        let again = invade_until(&field, StopRule::Steps(500));
        assert_eq!(trace.fingerprint, again.fingerprint);
        assert_eq!(trace, again);
    }

    #[test]
    fn invade_until_radius() {
        let field = WeightField::new(0x7ad105);
        let trace = invade_until(&field, StopRule::RadiusReached(16));
        let last = trace.steps.last().unwrap();
        assert_eq!(last.edge.norm(), 16);
        for step in &trace.steps[..trace.len() - 1] {
            assert!(step.edge.norm() < 16);
        }
        assert_eq!(trace.outcome.marker_step, trace.len() as u64);
    }

    #[test]
    fn box_stabilized_outcome() {
        let field = WeightField::new(0x0b5e55ed);
        let trace = invade_until(&field, StopRule::BoxStabilized { radius: 2, horizon: 4000 });
        assert_eq!(trace.len(), 4000);
        let marker = trace.outcome.marker_step;
        let last_touch = trace
            .steps
            .iter()
            .filter(|s| s.edge.inner_norm() <= 2)
            .map(|s| s.index)
            .max()
            .unwrap_or(0);
        assert_eq!(marker, last_touch);
        assert_eq!(trace.outcome.certified, 2 * marker <= 4000);
    }

    #[test]
    fn snapshot_restore_is_bit_identical() {
        let field = WeightField::new(0x5a95);
        let mut straight = Invasion::new(&field);
        for _ in 0..3000 {
            straight.advance();
        }
        let mut resumed = Invasion::new(&field);
        for _ in 0..1000 {
            resumed.advance();
        }
        let snap = resumed.snapshot();
        let mut resumed = Invasion::restore(&field, &snap).unwrap();
        assert!(resumed.verify_frontier());
        for _ in 0..2000 {
            resumed.advance();
        }
        assert_eq!(straight.fingerprint(), resumed.fingerprint());
        assert_eq!(straight.snapshot(), resumed.snapshot());
        // Further steps stay in lockstep.
        for _ in 0..100 {
            assert_eq!(straight.advance(), resumed.advance());
        }
    }

    #[test]
    fn restore_rejects_wrong_seed() {
        let field = WeightField::new(1);
        let other = WeightField::new(2);
        let mut engine = Invasion::new(&field);
        engine.advance();
        let snap = engine.snapshot();
        assert!(Invasion::restore(&other, &snap).is_err());
    }

    #[test]
    fn trace_binary_roundtrip() {
        let field = WeightField::new(0xdead);
        let trace = invade_until(&field, StopRule::Steps(257));
        let bytes = trace.to_bytes();
        let back = InvasionTrace::from_bytes(&bytes).unwrap();
        assert_eq!(trace, back);
        // Truncations and trailing garbage are rejected.
        assert!(InvasionTrace::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(InvasionTrace::from_bytes(&extended).is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let field = star_fixture();
        let trace = invade_until(&field, StopRule::Steps(2));
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,x,y,orient,weight,n_new_checked");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "1,0,0,V,0.2,3");
        assert!(lines[2].starts_with("2,"));
    }

    /// Build the threshold-open edge cluster reachable from `marked`,
    /// scanning a bounding box by brute force.
    fn threshold_cluster<W: WeightSource>(
        field: &W,
        threshold: f64,
        marked: &HashSet<Vertex>,
        radius: i32,
    ) -> HashSet<EdgeId> {
        let mut vertices: Vec<Vertex> = marked.iter().copied().collect();
        vertices.sort_unstable_by_key(|v| (v.x, v.y));
        let mut seen: HashSet<Vertex> = marked.clone();
        let mut cluster = HashSet::new();
        while let Some(v) = vertices.pop() {
            for (edge, other) in neighbors(v) {
                if edge.norm() > radius || field.weight(edge) > threshold {
                    continue;
                }
                cluster.insert(edge);
                if seen.insert(other) {
                    vertices.push(other);
                }
            }
        }
        cluster
    }

    #[test]
    fn modified_invade_freezes_on_finite_cluster() {
        // A length-4 cycle of light edges sits to the east of the origin;
        // one light edge connects the origin to it, one more light edge
        // hangs off the cycle.  Every other edge is heavy.
        let light = 0.3;
        let field = MapField::from_pairs(
            [
                (EdgeId::horizontal(ORIGIN), 0.4), // origin -> (1,0): touch edge
                (EdgeId::horizontal(Vertex::new(1, 0)), light),
                (EdgeId::vertical(Vertex::new(2, 0)), light),
                (EdgeId::horizontal(Vertex::new(1, 1)), light),
                (EdgeId::vertical(Vertex::new(1, 0)), light),
                (EdgeId::horizontal(Vertex::new(2, 1)), 0.45), // pendant
            ],
            0.9,
        );
        let marked: HashSet<Vertex> = [
            Vertex::new(1, 0),
            Vertex::new(2, 0),
            Vertex::new(2, 1),
            Vertex::new(1, 1),
        ]
        .into();
        let (trace, outcome) = modified_invade(&field, 0.5, &marked, 10_000);
        assert_eq!(outcome.touched_at, Some(1));
        assert!(!outcome.censored);
        let frozen = outcome.frozen_at.unwrap();
        assert_eq!(frozen, trace.len() as u64);
        // After the touch, every invaded edge is below the threshold.
        for step in &trace.steps[1..] {
            assert!(step.weight <= 0.5);
        }
        // The final invaded set is the touch prefix plus the reachable
        // threshold-open cluster of the marked vertices.
        let invaded: HashSet<EdgeId> = trace.steps.iter().map(|s| s.edge).collect();
        let mut expected = threshold_cluster(&field, 0.5, &marked, 10);
        expected.insert(EdgeId::horizontal(ORIGIN));
        assert_eq!(invaded, expected);
    }

    #[test]
    fn modified_invade_prefix_matches_ordinary() {
        let field = WeightField::new(0x600d);
        let marked: HashSet<Vertex> = [Vertex::new(5, 5)].into();
        let (modified, outcome) = modified_invade(&field, 0.5, &marked, 2000);
        let plain = invade_until(&field, StopRule::Steps(2000));
        if let Some(touch) = outcome.touched_at {
            for i in 0..touch as usize {
                assert_eq!(modified.steps[i], plain.steps[i]);
            }
        }
    }

    #[test]
    fn modified_invade_censors_on_budget() {
        // Threshold 0.999: essentially ordinary invasion, which never
        // freezes, so a small budget must censor.
        let field = WeightField::new(0xbadc0de);
        let marked: HashSet<Vertex> = [ORIGIN].into();
        let (trace, outcome) = modified_invade(&field, 0.999, &marked, 50);
        assert_eq!(trace.len(), 50);
        assert!(outcome.censored);
        assert_eq!(outcome.frozen_at, None);
    }

    #[test]
    fn decomposed_wrapper_requires_mode() {
        let plain = WeightField::new(9);
        let marked: HashSet<Vertex> = [ORIGIN].into();
        assert!(modified_invade_decomposed(&plain, &marked, 10).is_err());
        let decomposed = WeightField::decomposed(9, 0.5).unwrap();
        let (trace, _) = modified_invade_decomposed(&decomposed, &marked, 10).unwrap();
        assert_eq!(trace.len(), 10);
    }
}

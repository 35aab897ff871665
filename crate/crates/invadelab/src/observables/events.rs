//! Detectors for nested annulus events: open circuits, blocking dual
//! circuits with at most one defect edge, and outward open connections.
//!
//! All detectors read each edge weight against fixed levels — 1/2 for
//! open versus closed, or a per-scale level from a [`ThresholdManifest`]
//! — and confine every search to an explicit box, so each outcome is an
//! exact function of finitely many weights.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::lattice::{neighbors, Annulus, DualVertex, EdgeId, Rect, Vertex};
use crate::percolation::circuits::{
    circuit_vertices, closed_dual_circuit, dual_crosses_cut, dual_ring, innermost_open_circuit,
    open_circuit, outermost_open_circuit, ring_vertices,
};
use crate::percolation::{pn_qn, reach_in_rect, UnionFind};
use crate::weights::{trial_seed, WeightSource, P_C};

/// Near-critical crossing thresholds per scale, estimated once and shared
/// by every detector that needs them.
///
/// `p_hat(n)` brackets where the n-by-n crossing probability reaches
/// `1 - eps0`; `q_hat(n)` where it falls to `eps0`.  Detectors refuse to
/// run for a scale with no entry, so a detection is always tied to the
/// recorded estimation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdManifest {
    pub eps0: f64,
    pub trials: u64,
    pub seed: u64,
    pub entries: BTreeMap<i32, ThresholdEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub p_hat: f64,
    pub q_hat: f64,
    /// Every bisection decision during estimation was CI-separated.
    pub confident: bool,
}

impl ThresholdManifest {
    pub fn new(eps0: f64, trials: u64, seed: u64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 0.5) {
            return Err(invalid(format!("tolerance must lie in (0, 1/2), got {eps0}")));
        }
        if trials < 2 {
            return Err(invalid("need at least two trials per estimate"));
        }
        Ok(ThresholdManifest { eps0, trials, seed, entries: BTreeMap::new() })
    }

    /// Estimate and store the thresholds for one scale.  The estimation
    /// seed is a fixed function of the manifest seed and the scale, so
    /// recomputation is reproducible entry by entry.
    pub fn compute(&mut self, n: i32) -> Result<ThresholdEntry> {
        let est = pn_qn(n, self.eps0, self.trials, trial_seed(self.seed, n as u64))?;
        let entry = ThresholdEntry { p_hat: est.p(), q_hat: est.q(), confident: est.confident };
        self.entries.insert(n, entry);
        Ok(entry)
    }

    /// Store externally chosen thresholds (fixtures, reruns).
    pub fn insert(&mut self, n: i32, p_hat: f64, q_hat: f64) {
        self.entries.insert(n, ThresholdEntry { p_hat, q_hat, confident: true });
    }

    pub fn p_hat(&self, n: i32) -> Result<f64> {
        self.entries.get(&n).map(|e| e.p_hat).ok_or(Error::MissingThreshold { n })
    }

    pub fn q_hat(&self, n: i32) -> Result<f64> {
        self.entries.get(&n).map(|e| e.q_hat).ok_or(Error::MissingThreshold { n })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Five radii at the dyadic exponents `k + 1 + m·{0, 1/8, 1/4, 1/2, 1}`,
/// each rounded to the nearest integer and bumped minimally so the
/// sequence is strictly increasing.
pub fn dyadic_radii(k: u32, m: u32) -> Result<[i32; 5]> {
    if m == 0 {
        return Err(invalid("spread exponent m must be at least 1"));
    }
    if k + 1 + m > 24 {
        return Err(invalid(format!("radius exponent {} too large", k + 1 + m)));
    }
    let mut out = [0i32; 5];
    for (i, frac) in [0.0, 0.125, 0.25, 0.5, 1.0].into_iter().enumerate() {
        let r = ((k + 1) as f64 + m as f64 * frac).exp2().round() as i32;
        out[i] = if i == 0 { r } else { r.max(out[i - 1] + 1) };
    }
    Ok(out)
}

/// The four nested conditions of the coarse annulus event at spread
/// `(k, m)`, over the radii `r0 < r1 < r2 < r3 < r4` of [`dyadic_radii`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DkmConditions {
    /// Open circuit in `Ann(r0, r1)` at level 1/2.
    pub inner_circuit: bool,
    /// Closed dual circuit in `Ann(r1, r2)*` at the scale-`r2` upper
    /// threshold.
    pub dual_barrier: bool,
    /// Open circuit in `Ann(r3, r4)` at level 1/2.
    pub outer_circuit: bool,
    /// The outermost such circuit reaches the truncation boundary through
    /// edges open at the upper threshold.
    pub outward_link: bool,
}

impl DkmConditions {
    pub fn all(self) -> bool {
        self.inner_circuit && self.dual_barrier && self.outer_circuit && self.outward_link
    }
}

fn dkm_radii_and_level(
    k: u32,
    m: u32,
    m_truncate: Option<i32>,
    thresholds: &ThresholdManifest,
) -> Result<([i32; 5], i32, f64)> {
    let radii = dyadic_radii(k, m)?;
    let m_trunc = m_truncate.unwrap_or(8 * radii[4]);
    if m_trunc <= radii[4] {
        return Err(invalid(format!(
            "truncation radius {m_trunc} must exceed the outermost radius {}",
            radii[4]
        )));
    }
    if m_trunc > 4096 {
        return Err(invalid(format!("truncation radius {m_trunc} exceeds the supported 4096")));
    }
    let p_hat = thresholds.p_hat(radii[2])?;
    Ok((radii, m_trunc, p_hat))
}

/// Evaluate all four conditions of the coarse event (no short-circuit, so
/// the result doubles as a diagnostic of which part failed).
pub fn dkm_conditions<W: WeightSource>(
    field: &W,
    k: u32,
    m: u32,
    m_truncate: Option<i32>,
    thresholds: &ThresholdManifest,
) -> Result<DkmConditions> {
    let (radii, m_trunc, p_hat) = dkm_radii_and_level(k, m, m_truncate, thresholds)?;
    let [r0, r1, r2, r3, r4] = radii;
    let inner_circuit = open_circuit(Annulus::new(r0, r1), |e| field.weight(e) <= P_C);
    let dual_barrier = closed_dual_circuit(Annulus::new(r1, r2), |e| field.weight(e) <= p_hat);
    let outer = outermost_open_circuit(Annulus::new(r3, r4), |e| field.weight(e) <= P_C);
    let outward_link = match &outer {
        None => false,
        Some(circuit) => level_search(
            field,
            circuit_vertices(circuit),
            p_hat,
            m_trunc,
            |_| true,
            |v| v.norm() == m_trunc,
        ),
    };
    Ok(DkmConditions {
        inner_circuit,
        dual_barrier,
        outer_circuit: outer.is_some(),
        outward_link,
    })
}

/// The coarse event occurred: all four conditions hold.  Evaluates them
/// cheapest-first and stops at the first failure.
pub fn detect_event_dkm<W: WeightSource>(
    field: &W,
    k: u32,
    m: u32,
    m_truncate: Option<i32>,
    thresholds: &ThresholdManifest,
) -> Result<bool> {
    let (radii, m_trunc, p_hat) = dkm_radii_and_level(k, m, m_truncate, thresholds)?;
    let [r0, r1, r2, r3, r4] = radii;
    if !open_circuit(Annulus::new(r0, r1), |e| field.weight(e) <= P_C) {
        return Ok(false);
    }
    if !closed_dual_circuit(Annulus::new(r1, r2), |e| field.weight(e) <= p_hat) {
        return Ok(false);
    }
    let Some(circuit) = outermost_open_circuit(Annulus::new(r3, r4), |e| field.weight(e) <= P_C)
    else {
        return Ok(false);
    };
    Ok(level_search(
        field,
        circuit_vertices(&circuit),
        p_hat,
        m_trunc,
        |_| true,
        |v| v.norm() == m_trunc,
    ))
}

/// Outcome of the defect-circuit detector, with replayable witnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct DnDetection {
    pub occurred: bool,
    /// Innermost circuit in `Ann(n, 2n)` open at the scale-n lower
    /// threshold, when one exists.
    pub inner_circuit: Option<Vec<EdgeId>>,
    /// Outermost circuit in `Ann(8n, 16n)` open at 1/2, when one exists.
    pub outer_circuit: Option<Vec<EdgeId>>,
    /// The first certifying defect edge of `Ann(6n, 7n)` in code order.
    pub defect: Option<EdgeId>,
}

fn check_dn_scale(n: i32) -> Result<()> {
    if n < 1 {
        return Err(invalid(format!("scale must be at least 1, got {n}")));
    }
    if n > 128 {
        return Err(invalid(format!("scale {n} exceeds the supported 128")));
    }
    Ok(())
}

/// Detect the three-part defect event at scale `n`:
///
/// 1. a circuit open at the lower threshold in `Ann(n, 2n)`;
/// 2. a defect edge `f` in `Ann(6n, 7n)` with weight strictly between the
///    lower threshold and 1/2, whose dual endpoints are joined by a path
///    of closed dual edges inside `Ann(4n, 8n)*` winding around the
///    origin together with the dual of `f`, while `f`'s endpoints carry
///    two open legs: one into `B(n)`, one out to the boundary of
///    `B(16n)`, neither using `f` itself;
/// 3. a circuit open at 1/2 in `Ann(8n, 16n)`.
///
/// The returned witnesses are the innermost circuit for (1), the
/// outermost for (3), and the first certifying defect in code order.
pub fn detect_event_dn<W: WeightSource>(
    field: &W,
    n: i32,
    thresholds: &ThresholdManifest,
) -> Result<DnDetection> {
    check_dn_scale(n)?;
    let q_hat = thresholds.q_hat(n)?;
    let inner_circuit =
        innermost_open_circuit(Annulus::new(n, 2 * n), |e| field.weight(e) <= q_hat);
    let outer_circuit =
        outermost_open_circuit(Annulus::new(8 * n, 16 * n), |e| field.weight(e) <= P_C);
    let mut det = DnDetection { occurred: false, inner_circuit, outer_circuit, defect: None };
    if det.inner_circuit.is_none() || det.outer_circuit.is_none() {
        return Ok(det);
    }
    let bound = 16 * n;
    let rect = Rect::new(-bound, -bound, bound, bound);
    let open = |e: EdgeId| field.weight(e) <= P_C;
    let to_center = reach_in_rect(rect, ring_vertices(n), open);
    let to_outer = reach_in_rect(rect, ring_vertices(bound), open);
    let mut band = DualBand::new(field, 4 * n, 8 * n);
    det.defect = find_defect(
        field,
        n,
        q_hat,
        &mut band,
        &to_center,
        None,
        &to_outer,
        |v: Vertex| v.norm() == bound,
    );
    det.occurred = det.defect.is_some();
    Ok(det)
}

/// Inward half of the defect event relative to a fixed outer circuit:
/// conditions (1) and (2) of [`detect_event_dn`], with the outward leg
/// running to a vertex of `d_star` instead of the box boundary, and the
/// inward leg forbidden from using `avoid`.
pub fn detect_event_dn_int<W: WeightSource>(
    field: &W,
    n: i32,
    d_star: &[EdgeId],
    avoid: Option<EdgeId>,
    thresholds: &ThresholdManifest,
) -> Result<bool> {
    check_dn_scale(n)?;
    check_dn_circuit(n, d_star)?;
    let q_hat = thresholds.q_hat(n)?;
    if innermost_open_circuit(Annulus::new(n, 2 * n), |e| field.weight(e) <= q_hat).is_none() {
        return Ok(false);
    }
    let bound = 16 * n;
    let rect = Rect::new(-bound, -bound, bound, bound);
    let open = |e: EdgeId| field.weight(e) <= P_C;
    let targets = circuit_vertices(d_star);
    let to_center = reach_in_rect(rect, ring_vertices(n), open);
    let to_star = reach_in_rect(rect, targets.iter().copied(), open);
    let mut band = DualBand::new(field, 4 * n, 8 * n);
    let defect = find_defect(
        field,
        n,
        q_hat,
        &mut band,
        &to_center,
        avoid,
        &to_star,
        |v: Vertex| targets.contains(&v),
    );
    Ok(defect.is_some())
}

/// Outward half: `d_star` is the outermost circuit of `Ann(8n, 16n)` open
/// at 1/2, and reaches the boundary of `B(16n)` by an open path.  The
/// truncation radius (default eight times the outer scale) is validated
/// for interface compatibility; the outcome is settled inside `B(16n)`
/// because any path to the boundary meets it at its first exit.
pub fn detect_event_dn_ext<W: WeightSource>(
    field: &W,
    n: i32,
    d_star: &[EdgeId],
    m_truncate: Option<i32>,
) -> Result<bool> {
    check_dn_scale(n)?;
    check_dn_circuit(n, d_star)?;
    let bound = 16 * n;
    let m_trunc = m_truncate.unwrap_or(8 * bound);
    if m_trunc < bound {
        return Err(invalid(format!(
            "truncation radius {m_trunc} must be at least the outer scale {bound}"
        )));
    }
    let open = |e: EdgeId| field.weight(e) <= P_C;
    match outermost_open_circuit(Annulus::new(8 * n, bound), open) {
        Some(circuit) if circuit == sorted_by_code(d_star) => Ok(level_search(
            field,
            circuit_vertices(&circuit),
            P_C,
            bound,
            |_| true,
            |v| v.norm() == bound,
        )),
        _ => Ok(false),
    }
}

fn check_dn_circuit(n: i32, d_star: &[EdgeId]) -> Result<()> {
    if d_star.is_empty() {
        return Err(invalid("outer circuit must be nonempty"));
    }
    let ann = Annulus::new(8 * n, 16 * n);
    if d_star.iter().any(|e| !ann.contains_edge(*e)) {
        return Err(invalid("outer circuit must lie in Ann(8n, 16n)"));
    }
    Ok(())
}

fn sorted_by_code(edges: &[EdgeId]) -> Vec<EdgeId> {
    let mut out = edges.to_vec();
    out.sort_unstable_by_key(|e| e.code());
    out
}

/// The pivotal-scale event for an edge `e` of `Ann(2^(k-1), 2^k)`: an
/// open circuit in `Ann(2^(k-3), 2^(k-2))`, that circuit joined to an
/// endpoint of `e` by an open path inside `B(2^k)`, and a closed dual
/// circuit in `Ann(2^(k+1), 2^(k+2))*` at level `1/2 + eps`.
pub fn detect_event_lk<W: WeightSource>(field: &W, k: u32, e: EdgeId, eps: f64) -> Result<bool> {
    if k < 3 {
        return Err(invalid(format!("need k >= 3 so the inner annulus exists, got {k}")));
    }
    if k > 9 {
        return Err(invalid(format!("scale exponent {k} exceeds the supported 9")));
    }
    if eps < 0.0 {
        return Err(invalid(format!("eps must be nonnegative, got {eps}")));
    }
    let hi = 1 << k;
    if !Annulus::new(hi / 2, hi).contains_edge(e) {
        return Err(invalid("edge must lie in Ann(2^(k-1), 2^k)"));
    }
    let open = |ed: EdgeId| field.weight(ed) <= P_C;
    let Some(circuit) = outermost_open_circuit(Annulus::new(hi / 8, hi / 4), open) else {
        return Ok(false);
    };
    let (a, b) = e.endpoints();
    if !level_search(field, circuit_vertices(&circuit), P_C, hi, |_| true, |v| v == a || v == b) {
        return Ok(false);
    }
    Ok(closed_dual_circuit(Annulus::new(2 * hi, 4 * hi), |ed| {
        field.weight(ed) <= P_C + eps
    }))
}

/// Two-sheet union-find over the closed dual edges of a band of dual
/// rings: answers whether two dual vertices are joined by a closed dual
/// path of a given winding parity around the origin.
struct DualBand {
    ids: HashMap<DualVertex, u32>,
    uf: UnionFind,
}

impl DualBand {
    fn new<W: WeightSource>(field: &W, inner: i32, outer: i32) -> Self {
        let mut ids = HashMap::new();
        for r in inner..outer {
            for dv in dual_ring(r) {
                let next = ids.len() as u32;
                ids.insert(dv, next);
            }
        }
        let mut uf = UnionFind::new(2 * ids.len());
        for (&dv, &ia) in &ids {
            for (de, next) in dv.neighbors() {
                let Some(&ib) = ids.get(&next) else { continue };
                if field.weight(de.primal) <= P_C {
                    continue;
                }
                let flip = dual_crosses_cut(de) as u32;
                uf.union(2 * ia, 2 * ib + flip);
                uf.union(2 * ia + 1, 2 * ib + (1 - flip));
            }
        }
        DualBand { ids, uf }
    }

    /// The dual endpoints of `f` are joined by a closed dual path in the
    /// band which, completed through the dual of `f`, winds around the
    /// origin an odd number of times.
    fn closes_through(&mut self, f: EdgeId) -> bool {
        let (d1, d2) = f.dual().endpoints();
        let (Some(&i1), Some(&i2)) = (self.ids.get(&d1), self.ids.get(&d2)) else {
            return false;
        };
        let want = 1 - dual_crosses_cut(f.dual()) as u32;
        self.uf.same(2 * i1, 2 * i2 + want)
    }
}

/// Scan `Ann(6n, 7n)` in code order for a defect edge whose dual closes
/// the band barrier and whose endpoints carry the two open legs.  The
/// reachability bitmaps are a necessary-condition screen (they may use
/// paths through the defect); each surviving candidate is confirmed by
/// defect-avoiding searches.
#[allow(clippy::too_many_arguments)]
fn find_defect<W: WeightSource>(
    field: &W,
    n: i32,
    q_hat: f64,
    band: &mut DualBand,
    to_center: &[bool],
    center_avoid: Option<EdgeId>,
    to_outer: &[bool],
    outer_target: impl Fn(Vertex) -> bool,
) -> Option<EdgeId> {
    let bound = 16 * n;
    let rect = Rect::new(-bound, -bound, bound, bound);
    let ann = Annulus::new(6 * n, 7 * n);
    for f in Rect::new(-7 * n, -7 * n, 7 * n, 7 * n).edges() {
        if !ann.contains_edge(f) {
            continue;
        }
        let w = field.weight(f);
        if w <= q_hat || w >= P_C {
            continue;
        }
        if !band.closes_through(f) {
            continue;
        }
        let (a, b) = f.endpoints();
        for (ce, oe) in [(a, b), (b, a)] {
            if !to_center[rect.vertex_index(ce)] || !to_outer[rect.vertex_index(oe)] {
                continue;
            }
            let center_ok = level_search(
                field,
                [ce],
                P_C,
                bound,
                |ed| ed != f && Some(ed) != center_avoid,
                |v| v.norm() <= n,
            );
            if center_ok
                && level_search(field, [oe], P_C, bound, |ed| ed != f, &outer_target)
            {
                return Some(f);
            }
        }
    }
    None
}

/// Breadth-first reachability from `seeds` to a `target` vertex through
/// edges with weight at most `level` and passing `usable`, with every
/// visited vertex inside `B(bound)`.
fn level_search<W: WeightSource>(
    field: &W,
    seeds: impl IntoIterator<Item = Vertex>,
    level: f64,
    bound: i32,
    usable: impl Fn(EdgeId) -> bool,
    target: impl Fn(Vertex) -> bool,
) -> bool {
    let rect = Rect::new(-bound, -bound, bound, bound);
    let mut seen = vec![false; rect.vertex_count()];
    let mut queue: VecDeque<Vertex> = VecDeque::new();
    for v in seeds {
        if !rect.contains_vertex(v) {
            continue;
        }
        if target(v) {
            return true;
        }
        if !std::mem::replace(&mut seen[rect.vertex_index(v)], true) {
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for (e, w) in neighbors(u) {
            if !rect.contains_vertex(w) {
                continue;
            }
            let idx = rect.vertex_index(w);
            if seen[idx] || field.weight(e) > level || !usable(e) {
                continue;
            }
            if target(w) {
                return true;
            }
            seen[idx] = true;
            queue.push_back(w);
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invasion::{invade_until, StopRule};
    use crate::percolation::circuits::{closed_dual_circuit_by_winding, open_circuit_by_winding};
    use crate::weights::{MapField, WeightField};
    use std::collections::HashMap;

    fn h(x: i32, y: i32) -> EdgeId {
        EdgeId::horizontal(Vertex::new(x, y))
    }

    fn v(x: i32, y: i32) -> EdgeId {
        EdgeId::vertical(Vertex::new(x, y))
    }

    /// The edges of the square ring through the vertices of norm `r`,
    /// sorted by code like the extraction routines sort their output.
    fn perimeter(r: i32) -> Vec<EdgeId> {
        let edges: Vec<EdgeId> = Rect::new(-r, -r, r, r)
            .edges()
            .filter(|e| Annulus::new(r - 1, r).contains_edge(*e))
            .collect();
        sorted_by_code(&edges)
    }

    /// One overridden edge on top of a shared base field.
    struct Overlay<'a, W: WeightSource> {
        base: &'a W,
        edge: EdgeId,
        weight: f64,
    }

    impl<W: WeightSource> WeightSource for Overlay<'_, W> {
        fn weight(&self, e: EdgeId) -> f64 {
            if e == self.edge {
                self.weight
            } else {
                self.base.weight(e)
            }
        }
    }

    /// A deterministic planted skeleton over a random base field.
    struct PatchField<'a, W: WeightSource> {
        base: &'a W,
        patch: &'a HashMap<EdgeId, f64>,
    }

    impl<W: WeightSource> WeightSource for PatchField<'_, W> {
        fn weight(&self, e: EdgeId) -> f64 {
            self.patch.get(&e).copied().unwrap_or_else(|| self.base.weight(e))
        }
    }

    #[test]
    fn dyadic_radii_frozen_and_increasing() {
        assert_eq!(dyadic_radii(0, 1).unwrap(), [2, 3, 4, 5, 6]);
        assert_eq!(dyadic_radii(0, 8).unwrap(), [2, 4, 8, 32, 512]);
        assert_eq!(dyadic_radii(3, 2).unwrap(), [16, 19, 23, 32, 64]);
        assert_eq!(dyadic_radii(3, 4).unwrap(), [16, 23, 32, 64, 256]);
        for k in 0..=5 {
            for m in 1..=8 {
                let r = dyadic_radii(k, m).unwrap();
                assert!(r.windows(2).all(|w| w[0] < w[1]), "radii not increasing: {r:?}");
                assert!(r[4] >= 1 << (k + 1 + m), "outermost radius too small: {r:?}");
                if m >= 2 {
                    // Bumping never cascades to the end once the raw
                    // exponents are at least a half step apart.
                    assert_eq!(r[4], 1 << (k + 1 + m));
                }
            }
        }
        assert!(dyadic_radii(4, 0).is_err());
        assert!(dyadic_radii(20, 20).is_err());
    }

    #[test]
    fn manifest_lookup_save_load() {
        let mut manifest = ThresholdManifest::new(0.05, 100, 42).unwrap();
        manifest.insert(8, 0.61, 0.39);
        assert_eq!(manifest.p_hat(8).unwrap(), 0.61);
        assert_eq!(manifest.q_hat(8).unwrap(), 0.39);
        assert!(matches!(manifest.p_hat(16), Err(Error::MissingThreshold { n: 16 })));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thresholds.json");
        manifest.save(&path).unwrap();
        assert_eq!(ThresholdManifest::load(&path).unwrap(), manifest);
        assert!(ThresholdManifest::new(0.6, 100, 1).is_err());
        assert!(ThresholdManifest::new(0.05, 1, 1).is_err());
    }

    #[test]
    fn manifest_compute_brackets_half() {
        let mut manifest = ThresholdManifest::new(0.1, 200, 0x7e57).unwrap();
        let entry = manifest.compute(2).unwrap();
        assert!(entry.q_hat < 0.5 && 0.5 < entry.p_hat, "thresholds must straddle 1/2: {entry:?}");
        assert_eq!(manifest.p_hat(2).unwrap(), entry.p_hat);
    }

    fn dkm_fixture() -> (MapField, ThresholdManifest) {
        let mut field = MapField::new(HashMap::new(), 0.7);
        for e in perimeter(3) {
            field.entries.insert(e, 0.3);
        }
        for e in perimeter(6) {
            field.entries.insert(e, 0.3);
        }
        for x in 6..=11 {
            field.entries.insert(h(x, 0), 0.55);
        }
        let mut manifest = ThresholdManifest::new(0.05, 100, 7).unwrap();
        manifest.insert(4, 0.6, 0.4);
        (field, manifest)
    }

    #[test]
    fn dkm_planted_truth_table() {
        let (field, manifest) = dkm_fixture();
        let conds = dkm_conditions(&field, 0, 1, Some(12), &manifest).unwrap();
        assert!(conds.all(), "planted fixture must satisfy all conditions: {conds:?}");
        assert!(detect_event_dkm(&field, 0, 1, Some(12), &manifest).unwrap());

        let break_edge = |edge: EdgeId, weight: f64| {
            let mut broken = field.clone();
            broken.entries.insert(edge, weight);
            dkm_conditions(&broken, 0, 1, Some(12), &manifest).unwrap()
        };
        // A hole in the inner ring of open edges.
        let c = break_edge(perimeter(3)[0], 0.7);
        assert_eq!((c.inner_circuit, c.dual_barrier, c.outer_circuit, c.outward_link),
                   (false, true, true, true));
        // A passable edge through the dual barrier band.
        let c = break_edge(h(3, 0), 0.4);
        assert_eq!((c.inner_circuit, c.dual_barrier, c.outer_circuit, c.outward_link),
                   (true, false, true, true));
        // A hole in the outer ring: both the circuit and its link fail.
        let c = break_edge(perimeter(6)[0], 0.7);
        assert_eq!((c.inner_circuit, c.dual_barrier, c.outer_circuit, c.outward_link),
                   (true, true, false, false));
        // A cut in the outward ray.
        let c = break_edge(h(9, 0), 0.7);
        assert_eq!((c.inner_circuit, c.dual_barrier, c.outer_circuit, c.outward_link),
                   (true, true, true, false));
    }

    #[test]
    fn dkm_rejects_bad_parameters() {
        let (field, manifest) = dkm_fixture();
        assert!(dkm_conditions(&field, 0, 1, Some(6), &manifest).is_err());
        assert!(dkm_conditions(&field, 0, 1, Some(8192), &manifest).is_err());
        // No thresholds for the barrier scale of (k, m) = (1, 1).
        assert!(matches!(
            dkm_conditions(&field, 1, 1, Some(16), &manifest),
            Err(Error::MissingThreshold { n: 6 })
        ));
    }

    #[test]
    fn dkm_matches_winding_detectors() {
        // The circuit conditions re-decided by the independent
        // winding-parity detectors at the same annuli and levels, across
        // planted fields (true branches), broken variants (mixed), and
        // random fields (false branches).
        fn agree<W: WeightSource>(field: &W, manifest: &ThresholdManifest, tag: &str) {
            let conds = dkm_conditions(field, 0, 1, Some(12), manifest).unwrap();
            let p_hat = manifest.p_hat(4).unwrap();
            assert_eq!(
                conds.inner_circuit,
                open_circuit_by_winding(Annulus::new(2, 3), |e| field.weight(e) <= P_C),
                "{tag}: inner"
            );
            assert_eq!(
                conds.dual_barrier,
                closed_dual_circuit_by_winding(Annulus::new(3, 4), |e| field.weight(e) <= p_hat),
                "{tag}: barrier"
            );
            assert_eq!(
                conds.outer_circuit,
                open_circuit_by_winding(Annulus::new(5, 6), |e| field.weight(e) <= P_C),
                "{tag}: outer"
            );
        }

        let (fixture, manifest) = dkm_fixture();
        agree(&fixture, &manifest, "fixture");
        for (edge, weight) in [(perimeter(3)[0], 0.7), (h(3, 0), 0.4), (perimeter(6)[0], 0.7)] {
            let mut broken = fixture.clone();
            broken.entries.insert(edge, weight);
            agree(&broken, &manifest, "broken");
        }
        for seed in 0..100u64 {
            let field = WeightField::new(trial_seed(0xd1c3, seed));
            agree(&field, &manifest, &format!("seed {seed}"));
        }
    }

    #[test]
    fn dkm_monotone_under_weight_increase() {
        let mut manifest = ThresholdManifest::new(0.05, 100, 7).unwrap();
        manifest.insert(6, 0.55, 0.45);
        for seed in 0..60u64 {
            let field = WeightField::new(trial_seed(0x960d0, seed));
            let base = dkm_conditions(&field, 1, 1, Some(16), &manifest).unwrap();
            for edge in [v(5, 0), v(6, 0), v(8, 0), h(10, 3)] {
                let raised = Overlay { base: &field, edge, weight: 0.999 };
                let up = dkm_conditions(&raised, 1, 1, Some(16), &manifest).unwrap();
                // Raising a weight can only destroy open structures and
                // help the closed dual barrier.
                assert!(!up.inner_circuit || base.inner_circuit, "seed {seed} edge {edge:?}");
                assert!(!base.dual_barrier || up.dual_barrier, "seed {seed} edge {edge:?}");
                let up_out = up.outer_circuit && up.outward_link;
                let base_out = base.outer_circuit && base.outward_link;
                assert!(!up_out || base_out, "seed {seed} edge {edge:?}");
            }
        }
    }

    fn dn_fixture() -> (MapField, ThresholdManifest) {
        let mut field = MapField::new(HashMap::new(), 0.95);
        for e in perimeter(3) {
            field.entries.insert(e, 0.2);
        }
        for e in perimeter(24) {
            field.entries.insert(e, 0.2);
        }
        for x in 2..=12 {
            field.entries.insert(h(x, 0), 0.2);
        }
        field.entries.insert(v(13, 0), 0.4);
        for y in 1..=31 {
            field.entries.insert(v(13, y), 0.2);
        }
        let mut manifest = ThresholdManifest::new(0.05, 100, 7).unwrap();
        manifest.insert(2, 0.7, 0.3);
        (field, manifest)
    }

    #[test]
    fn dn_all_open_has_witnesses_but_no_defect() {
        let field = MapField::new(HashMap::new(), 0.01);
        let mut manifest = ThresholdManifest::new(0.05, 100, 7).unwrap();
        manifest.insert(2, 0.75, 0.25);
        let det = detect_event_dn(&field, 2, &manifest).unwrap();
        assert!(!det.occurred);
        assert!(det.inner_circuit.is_some());
        assert!(det.outer_circuit.is_some());
        assert_eq!(det.defect, None);
    }

    #[test]
    fn dn_planted_event_witnesses_and_halves() {
        let (field, manifest) = dn_fixture();
        let det = detect_event_dn(&field, 2, &manifest).unwrap();
        assert!(det.occurred);
        assert_eq!(det.inner_circuit.as_deref(), Some(perimeter(3).as_slice()));
        assert_eq!(det.outer_circuit.as_deref(), Some(perimeter(24).as_slice()));
        assert_eq!(det.defect, Some(v(13, 0)));

        let outer = det.outer_circuit.unwrap();
        assert!(detect_event_dn_int(&field, 2, &outer, None, &manifest).unwrap());
        // Blocking one edge of the only inward leg kills the inward half.
        assert!(!detect_event_dn_int(&field, 2, &outer, Some(h(7, 0)), &manifest).unwrap());
        assert!(detect_event_dn_ext(&field, 2, &outer, None).unwrap());
        assert!(detect_event_dn_ext(&field, 2, &outer, Some(64)).unwrap());
        // The inner witness is not a circuit of Ann(16, 32).
        let inner = det.inner_circuit.unwrap();
        assert!(detect_event_dn_ext(&field, 2, &inner, None).is_err());
        // Detectors refuse to run without thresholds for the scale.
        let empty = ThresholdManifest::new(0.05, 100, 7).unwrap();
        assert!(matches!(
            detect_event_dn(&field, 2, &empty),
            Err(Error::MissingThreshold { n: 2 })
        ));
    }

    /// Planted geometry that realizes the defect event at scale `n` no
    /// matter what the surrounding weights are: open rings in the two
    /// circuit annuli, an open corridor from `B(n)` through a defect out
    /// to the boundary, and a closed moat across the defect's annulus
    /// for the dual barrier to follow.
    fn dn_skeleton(n: i32) -> HashMap<EdgeId, f64> {
        let mut patch = HashMap::new();
        let reach = 6 * n + 2;
        for e in Rect::new(-reach, -reach, reach, reach).edges() {
            if Annulus::new(6 * n - 1, reach).contains_edge(e) {
                patch.insert(e, 0.95);
            }
        }
        for e in perimeter(2 * n - 1) {
            patch.insert(e, 0.2);
        }
        for e in perimeter(12 * n) {
            patch.insert(e, 0.2);
        }
        for x in n..=(6 * n) {
            patch.insert(h(x, 0), 0.2);
        }
        patch.insert(v(6 * n + 1, 0), 0.4);
        for y in 1..(16 * n) {
            patch.insert(v(6 * n + 1, y), 0.2);
        }
        patch
    }

    #[test]
    fn dn_skeleton_amid_noise() {
        // The raw event has vanishing probability on unconditioned
        // near-critical fields (circuits winding a ratio-two annulus are
        // exponentially costly in its aspect), so positives come from a
        // planted skeleton while random surroundings exercise the scan,
        // screens, and winding logic.
        let mut manifest = ThresholdManifest::new(0.05, 100, 7).unwrap();
        manifest.insert(2, 0.7, 0.3);
        manifest.insert(4, 0.7, 0.3);
        for n in [2i32, 4] {
            let patch = dn_skeleton(n);
            let q_hat = manifest.q_hat(n).unwrap();
            for i in 0..60u64 {
                let base = WeightField::new(trial_seed(0xd0_0d00 + n as u64, i));
                let field = PatchField { base: &base, patch: &patch };
                let det = detect_event_dn(&field, n, &manifest).unwrap();
                assert!(det.occurred, "n={n} trial {i}");
                let inner = det.inner_circuit.as_ref().unwrap();
                assert!(inner.iter().all(|e| field.weight(*e) <= q_hat), "n={n} trial {i}");
                let outer = det.outer_circuit.as_ref().unwrap();
                assert!(outer.iter().all(|e| field.weight(*e) <= P_C), "n={n} trial {i}");
                let f = det.defect.unwrap();
                let w = field.weight(f);
                assert!(q_hat < w && w < P_C, "n={n} trial {i}: defect weight {w}");
                assert!(Annulus::new(6 * n, 7 * n).contains_edge(f), "n={n} trial {i}");
                // The full event implies both halves relative to its own
                // outer witness.
                assert!(
                    detect_event_dn_int(&field, n, outer, None, &manifest).unwrap(),
                    "n={n} trial {i}"
                );
                assert!(detect_event_dn_ext(&field, n, outer, None).unwrap(), "n={n} trial {i}");
            }
        }
    }

    fn lk_fixture() -> MapField {
        let mut field = MapField::new(HashMap::new(), 0.9);
        for e in perimeter(3) {
            field.entries.insert(e, 0.3);
        }
        for x in 3..=11 {
            field.entries.insert(h(x, 0), 0.3);
        }
        field
    }

    #[test]
    fn lk_planted_and_validation() {
        let field = lk_fixture();
        let e = h(12, 0);
        assert!(detect_event_lk(&field, 4, e, 0.02).unwrap());
        // Cutting the connecting ray removes the event.
        let mut cut = field.clone();
        cut.entries.insert(h(8, 0), 0.9);
        assert!(!detect_event_lk(&cut, 4, e, 0.02).unwrap());
        // A level so high that no dual edge is closed removes the barrier.
        assert!(!detect_event_lk(&field, 4, e, 0.6).unwrap());
        assert!(detect_event_lk(&field, 2, e, 0.02).is_err());
        assert!(detect_event_lk(&field, 4, h(2, 0), 0.02).is_err());
        assert!(detect_event_lk(&field, 4, e, -0.1).is_err());
    }

    #[test]
    fn lk_monotone_in_eps() {
        let e = h(12, 0);
        for seed in 0..100u64 {
            let field = WeightField::new(trial_seed(0x1c, seed));
            let wide = detect_event_lk(&field, 4, e, 0.1).unwrap();
            let narrow = detect_event_lk(&field, 4, e, 0.02).unwrap();
            assert!(!wide || narrow, "seed {seed}: higher level must be harder");
        }
    }

    #[test]
    fn lk_positive_edges_get_invaded() {
        // Whenever the event holds and the edge weight is below the
        // barrier level, the growing cluster must take the edge before it
        // first escapes the barrier annulus.  Positives come from a
        // planted skeleton (ring, connecting ray, and a closed moat for
        // the dual barrier); the coupled edge's own weight stays random,
        // so about half the samples exercise the invasion check.
        let mut patch = lk_fixture().entries;
        for edge in Rect::new(-34, -34, 34, 34).edges() {
            if Annulus::new(31, 34).contains_edge(edge) {
                patch.insert(edge, 0.95);
            }
        }
        let e = h(12, 0);
        let eps = 0.02;
        let mut coupled = 0u64;
        for i in 0..100u64 {
            let base = WeightField::new(trial_seed(0x1c1c, i));
            let field = PatchField { base: &base, patch: &patch };
            assert!(detect_event_lk(&field, 4, e, eps).unwrap(), "trial {i}: event must hold");
            if field.weight(e) > P_C + eps {
                continue;
            }
            coupled += 1;
            let trace = invade_until(&field, StopRule::RadiusReached(66));
            assert!(
                trace.steps.iter().any(|s| s.edge == e),
                "trial {i}: event held but the edge was not invaded"
            );
        }
        assert!(coupled >= 20, "too few samples below the barrier level: {coupled}");
    }

    #[test]
    fn dkm_frequency_grows_with_spread() {
        // Directional check only: at desk scales the absolute rates are
        // near zero (annulus circuits at these aspects are very rare),
        // so the assertion guards the trend, not a magnitude.
        let mut manifest = ThresholdManifest::new(0.05, 300, 0xfeed).unwrap();
        manifest.compute(23).unwrap();
        manifest.compute(32).unwrap();
        let trials = 400u64;
        let mut rates = Vec::new();
        for m in [2u32, 4] {
            let radii = dyadic_radii(3, m).unwrap();
            let m_trunc = Some(2 * radii[4]);
            let mut hits = 0u64;
            for i in 0..trials {
                let field = WeightField::new(trial_seed(0xdca0 + m as u64, i));
                if detect_event_dkm(&field, 3, m, m_trunc, &manifest).unwrap() {
                    hits += 1;
                }
            }
            rates.push(hits as f64 / trials as f64);
        }
        assert!(
            rates[1] >= rates[0] - 0.03,
            "wider spread should not make the event rarer: {rates:?}"
        );
    }
}

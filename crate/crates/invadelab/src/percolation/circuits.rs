//! Detection and extraction of circuits around the origin in annuli.
//!
//! Two independent formulations are implemented:
//!
//! - *Blocking-path detectors* ([`open_circuit`], [`closed_dual_circuit`]):
//!   an open circuit through the annulus edge set exists exactly when no
//!   path of the complementary kind joins the inner ring to the outer ring.
//!   These are the production detectors (one BFS over the band).
//! - *Winding detectors* ([`open_circuit_by_winding`],
//!   [`closed_dual_circuit_by_winding`]): lift the graph to its two-sheet
//!   cover cut along a ray from near the origin; a cycle encircles the
//!   origin exactly when some vertex joins its own twin.  Slower, but with
//!   entirely different failure modes — the tests pit the two against each
//!   other.
//!
//! [`outermost_open_circuit`] and [`innermost_open_circuit`] return the
//! actual circuit as an edge set: the interface between the dual flood from
//! one ring and the unflooded faces anchored at the opposite ring.

use std::collections::{HashMap, HashSet, VecDeque};

use super::{PercSample, UnionFind};
use crate::lattice::{Annulus, DualEdgeId, DualVertex, EdgeId, Orientation, Rect, Vertex};

/// All dual vertices (faces) at the given ring.
pub(crate) fn dual_ring(r: i32) -> Vec<DualVertex> {
    let mut out = Vec::new();
    for a in -r - 1..=r {
        for b in -r - 1..=r {
            let dv = DualVertex::new(a, b);
            if dv.ring() == r {
                out.push(dv);
            }
        }
    }
    out
}

/// Flood fill of the dual band of `ann` (faces with ring between `inner`
/// and `outer`), starting from one bounding ring.  A dual edge is passable
/// when its primal edge is not an annulus edge, or is closed.  Returns the
/// flooded set and whether the opposite ring was reached.
fn dual_flood<F: Fn(EdgeId) -> bool>(
    ann: Annulus,
    open: &F,
    from_inner: bool,
) -> (HashSet<DualVertex>, bool) {
    let (m, n) = (ann.inner, ann.outer);
    let (start, goal) = if from_inner { (m, n) } else { (n, m) };
    let mut seen: HashSet<DualVertex> = dual_ring(start).into_iter().collect();
    let mut queue: VecDeque<DualVertex> = seen.iter().copied().collect();
    let mut reached = false;
    while let Some(dv) = queue.pop_front() {
        for (de, next) in dv.neighbors() {
            let r = next.ring();
            if r < m || r > n || seen.contains(&next) {
                continue;
            }
            let passable = !ann.contains_edge(de.primal) || !open(de.primal);
            if passable {
                seen.insert(next);
                if r == goal {
                    reached = true;
                }
                queue.push_back(next);
            }
        }
    }
    (seen, reached)
}

/// There is a circuit of open annulus edges around the origin.
pub fn open_circuit<F: Fn(EdgeId) -> bool>(ann: Annulus, open: F) -> bool {
    let (_, reached) = dual_flood(ann, &open, false);
    !reached
}

/// There is a circuit of closed dual edges around the origin, using dual
/// edges with both faces in the dual band (rings `inner..outer`).
///
/// Equivalent blocking form: no path of primal vertices with norms in
/// `[inner, outer]` joins the inner ring to the outer ring, where an edge
/// whose dual lies inside the band must be open to be used and every other
/// edge is free.  Note the free edges are consulted for membership only,
/// so the decision depends solely on primal edges dual to the band.
pub fn closed_dual_circuit<F: Fn(EdgeId) -> bool>(ann: Annulus, open: F) -> bool {
    let (m, n) = (ann.inner, ann.outer);
    let in_dual_band = |e: EdgeId| {
        let (da, db) = e.dual().endpoints();
        let (ra, rb) = (da.ring(), db.ring());
        m <= ra && ra < n && m <= rb && rb < n
    };
    let mut seen: HashSet<Vertex> = HashSet::new();
    let mut queue: VecDeque<Vertex> = VecDeque::new();
    for v in ring_vertices(m) {
        seen.insert(v);
        queue.push_back(v);
    }
    while let Some(v) = queue.pop_front() {
        for (e, w) in crate::lattice::neighbors(v) {
            let r = w.norm();
            if r < m || r > n || seen.contains(&w) {
                continue;
            }
            let passable = if in_dual_band(e) { open(e) } else { true };
            if passable {
                if r == n {
                    return false;
                }
                seen.insert(w);
                queue.push_back(w);
            }
        }
    }
    true
}

/// All primal vertices at sup-norm `r`.
pub(crate) fn ring_vertices(r: i32) -> Vec<Vertex> {
    if r == 0 {
        return vec![Vertex::new(0, 0)];
    }
    let mut out = Vec::new();
    for x in -r..=r {
        out.push(Vertex::new(x, r));
        out.push(Vertex::new(x, -r));
    }
    for y in -r + 1..=r - 1 {
        out.push(Vertex::new(r, y));
        out.push(Vertex::new(-r, y));
    }
    out
}

/// The edge crosses the ray from (1/2, 1/2) in the +x direction; used as
/// the branch cut for primal winding parity.
fn crosses_cut(e: EdgeId) -> bool {
    e.orient == Orientation::Vertical && e.base.y == 0 && e.base.x >= 1
}

/// The dual edge crosses the ray from the origin in the +x direction; the
/// branch cut for dual winding parity.
pub(crate) fn dual_crosses_cut(de: DualEdgeId) -> bool {
    let p = de.primal;
    p.orient == Orientation::Horizontal && p.base.y == 0 && p.base.x >= 0
}

/// Independent circuit detector: some open cycle within the annulus has
/// odd winding around the origin.
pub fn open_circuit_by_winding<F: Fn(EdgeId) -> bool>(ann: Annulus, open: F) -> bool {
    let rect = Rect::new(-ann.outer, -ann.outer, ann.outer, ann.outer);
    let mut ids: HashMap<Vertex, u32> = HashMap::new();
    for v in rect.vertices() {
        if ann.contains_vertex(v) {
            let next = ids.len() as u32;
            ids.insert(v, next);
        }
    }
    let mut uf = UnionFind::new(2 * ids.len());
    for e in rect.edges() {
        if !ann.contains_edge(e) || !open(e) {
            continue;
        }
        let (a, b) = e.endpoints();
        let (ia, ib) = (ids[&a], ids[&b]);
        let flip = crosses_cut(e) as u32;
        uf.union(2 * ia, 2 * ib + flip);
        uf.union(2 * ia + 1, 2 * ib + (1 - flip));
    }
    (0..ids.len() as u32).any(|i| uf.same(2 * i, 2 * i + 1))
}

/// Independent detector for closed dual circuits, by dual winding parity.
pub fn closed_dual_circuit_by_winding<F: Fn(EdgeId) -> bool>(ann: Annulus, open: F) -> bool {
    let (m, n) = (ann.inner, ann.outer);
    let mut ids: HashMap<DualVertex, u32> = HashMap::new();
    for r in m..n {
        for dv in dual_ring(r) {
            let next = ids.len() as u32;
            ids.insert(dv, next);
        }
    }
    let mut uf = UnionFind::new(2 * ids.len());
    for (&dv, &ia) in &ids {
        for (de, next) in dv.neighbors() {
            let Some(&ib) = ids.get(&next) else { continue };
            if open(de.primal) {
                continue;
            }
            let flip = dual_crosses_cut(de) as u32;
            uf.union(2 * ia, 2 * ib + flip);
            uf.union(2 * ia + 1, 2 * ib + (1 - flip));
        }
    }
    (0..ids.len() as u32).any(|i| uf.same(2 * i, 2 * i + 1))
}

/// Shared tail of the two extraction routines: the open annulus edges on
/// the interface between the flooded faces and the unflooded region
/// anchored at `anchor_ring`.
fn interface_circuit<F: Fn(EdgeId) -> bool>(
    ann: Annulus,
    open: &F,
    flood: &HashSet<DualVertex>,
    anchor_ring: i32,
) -> Vec<EdgeId> {
    let (m, n) = (ann.inner, ann.outer);
    // Grow the anchored region through face adjacencies between unflooded
    // faces, ignoring edge status: this is plane connectivity of the
    // complement, which stops exactly at the circuit.  Unflooded pockets
    // that are sealed off elsewhere in the annulus never join it.
    let mut anchored: HashSet<DualVertex> = HashSet::new();
    let mut queue: VecDeque<DualVertex> = VecDeque::new();
    for dv in dual_ring(anchor_ring) {
        debug_assert!(!flood.contains(&dv));
        anchored.insert(dv);
        queue.push_back(dv);
    }
    while let Some(dv) = queue.pop_front() {
        for (_, next) in dv.neighbors() {
            let r = next.ring();
            if r < m || r > n || flood.contains(&next) || !anchored.insert(next) {
                continue;
            }
            queue.push_back(next);
        }
    }
    let rect = Rect::new(-n, -n, n, n);
    let mut circuit: Vec<EdgeId> = rect
        .edges()
        .filter(|&e| ann.contains_edge(e) && open(e))
        .filter(|&e| {
            let (da, db) = e.dual().endpoints();
            (flood.contains(&da) && anchored.contains(&db))
                || (flood.contains(&db) && anchored.contains(&da))
        })
        .collect();
    circuit.sort_unstable_by_key(|e| e.code());
    circuit
}

/// The outermost open circuit around the origin in the annulus, as a
/// sorted edge set, or `None` when no circuit exists.
pub fn outermost_open_circuit<F: Fn(EdgeId) -> bool>(
    ann: Annulus,
    open: F,
) -> Option<Vec<EdgeId>> {
    let (flood, reached) = dual_flood(ann, &open, false);
    if reached {
        return None;
    }
    Some(interface_circuit(ann, &open, &flood, ann.inner))
}

/// The innermost open circuit around the origin in the annulus.
pub fn innermost_open_circuit<F: Fn(EdgeId) -> bool>(
    ann: Annulus,
    open: F,
) -> Option<Vec<EdgeId>> {
    let (flood, reached) = dual_flood(ann, &open, true);
    if reached {
        return None;
    }
    Some(interface_circuit(ann, &open, &flood, ann.outer))
}

/// Vertex set of a circuit returned by the extraction routines.
pub fn circuit_vertices(circuit: &[EdgeId]) -> HashSet<Vertex> {
    let mut out = HashSet::new();
    for e in circuit {
        let (a, b) = e.endpoints();
        out.insert(a);
        out.insert(b);
    }
    out
}

/// [`open_circuit`] against a frozen sample.  The sample must cover every
/// annulus edge.
pub fn open_circuit_in_annulus(sample: &PercSample, ann: Annulus) -> bool {
    open_circuit(ann, |e| sample.open_edge(e))
}

/// [`closed_dual_circuit`] against a frozen sample.  Dual-band edges
/// include some with an endpoint at norm `inner`, so the sample's region
/// must be a box containing B(outer), not just the annulus.
pub fn closed_dual_circuit_in_annulus(sample: &PercSample, ann: Annulus) -> bool {
    closed_dual_circuit(ann, |e| sample.open_edge(e))
}

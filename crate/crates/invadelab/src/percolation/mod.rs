//! Static Bernoulli percolation on finite pieces of the lattice.
//!
//! A [`PercSample`] freezes one configuration: every edge of a region is
//! open (weight at most the threshold) or closed.  Connectivity queries run
//! on a union-find built at construction time; region-restricted queries
//! and the annulus circuit detectors in [`circuits`] re-walk the sample
//! instead, because a global union-find cannot answer path-stays-inside
//! questions.

pub mod circuits;
pub mod estimators;

pub use estimators::{
    config_digest, correlation_length, crossing_probability, four_arm_probability, pn_qn,
    point_to_boundary, CorrelationLength, Estimate, PnQn,
};

use std::collections::{HashSet, VecDeque};

use crate::lattice::{neighbors, Annulus, EdgeId, LatticeBox, Rect, Vertex};
use crate::weights::WeightSource;

/// Union-find over dense `u32` indices, union by size with path halving.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let grand = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = grand;
            i = grand;
        }
        i
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }

    pub fn same(&mut self, a: u32, b: u32) -> bool {
        self.find(a) == self.find(b)
    }
}

/// The part of the lattice a sample covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Box(LatticeBox),
    Annulus(Annulus),
    Rect(Rect),
}

impl Region {
    /// Smallest vertex rectangle containing the region.
    pub fn bounding_rect(&self) -> Rect {
        match *self {
            Region::Box(b) => Rect::from_box(b),
            Region::Annulus(a) => Rect::new(-a.outer, -a.outer, a.outer, a.outer),
            Region::Rect(r) => r,
        }
    }

    pub fn contains_vertex(&self, v: Vertex) -> bool {
        match *self {
            Region::Box(b) => b.contains_vertex(v),
            Region::Annulus(a) => a.contains_vertex(v),
            Region::Rect(r) => r.contains_vertex(v),
        }
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        match *self {
            Region::Box(b) => b.contains_edge(e),
            Region::Annulus(a) => a.contains_edge(e),
            Region::Rect(r) => r.contains_edge(e),
        }
    }
}

/// One frozen Bernoulli configuration over a region.
pub struct PercSample {
    pub region: Region,
    pub rect: Rect,
    pub p: f64,
    /// Bit per rect edge index: the edge belongs to the region.
    present: Vec<u64>,
    /// Bit per rect edge index: the edge is present and open.
    open: Vec<u64>,
    /// Components of the open subgraph, over rect vertex indices.
    uf: UnionFind,
}

fn bit_get(bits: &[u64], i: usize) -> bool {
    bits[i >> 6] >> (i & 63) & 1 == 1
}

fn bit_set(bits: &mut [u64], i: usize) {
    bits[i >> 6] |= 1 << (i & 63);
}

impl PercSample {
    /// Freeze the region of `field` at threshold `p`.
    pub fn from_field<W: WeightSource>(field: &W, region: Region, p: f64) -> Self {
        Self::from_fn(region, p, |e| field.weight(e) <= p)
    }

    /// Freeze an explicit configuration; `is_open` is consulted once per
    /// region edge.  Fixtures and enumeration oracles enter here.
    pub fn from_fn(region: Region, p: f64, mut is_open: impl FnMut(EdgeId) -> bool) -> Self {
        let rect = region.bounding_rect();
        let words = rect.edge_count().div_ceil(64);
        let mut present = vec![0u64; words];
        let mut open = vec![0u64; words];
        let mut uf = UnionFind::new(rect.vertex_count());
        for e in rect.edges() {
            if !region.contains_edge(e) {
                continue;
            }
            let idx = rect.edge_index(e);
            bit_set(&mut present, idx);
            if is_open(e) {
                bit_set(&mut open, idx);
                let (a, b) = e.endpoints();
                uf.union(rect.vertex_index(a) as u32, rect.vertex_index(b) as u32);
            }
        }
        PercSample { region, rect, p, present, open, uf }
    }

    /// Open status of an edge, or `None` when the edge was not sampled.
    pub fn is_open(&self, e: EdgeId) -> Option<bool> {
        if !self.rect.contains_edge(e) || !self.region.contains_edge(e) {
            return None;
        }
        let idx = self.rect.edge_index(e);
        if !bit_get(&self.present, idx) {
            return None;
        }
        Some(bit_get(&self.open, idx))
    }

    /// Open status of a sampled edge; panics on out-of-region edges, which
    /// indicates a query bug rather than a data condition.
    pub fn open_edge(&self, e: EdgeId) -> bool {
        self.is_open(e)
            .unwrap_or_else(|| panic!("edge {e:?} lies outside the sampled region"))
    }

    /// The two endpoints lie in the same open cluster.
    pub fn connected(&mut self, a: Vertex, b: Vertex) -> bool {
        let (ia, ib) = (self.rect.vertex_index(a) as u32, self.rect.vertex_index(b) as u32);
        self.uf.same(ia, ib)
    }

    /// A left-right open crossing of the sampled rectangle: some vertex in
    /// the column `x = x0` joined to some vertex in the column `x = x1`.
    pub fn horizontal_crossing(&mut self) -> bool {
        let rect = self.rect;
        let mut left_roots = HashSet::new();
        for y in rect.y0..=rect.y1 {
            let idx = rect.vertex_index(Vertex::new(rect.x0, y)) as u32;
            left_roots.insert(self.uf.find(idx));
        }
        for y in rect.y0..=rect.y1 {
            let idx = rect.vertex_index(Vertex::new(rect.x1, y)) as u32;
            if left_roots.contains(&self.uf.find(idx)) {
                return true;
            }
        }
        false
    }

    /// A bottom-top open crossing of the sampled rectangle.
    pub fn vertical_crossing(&mut self) -> bool {
        let rect = self.rect;
        let mut bottom_roots = HashSet::new();
        for x in rect.x0..=rect.x1 {
            let idx = rect.vertex_index(Vertex::new(x, rect.y0)) as u32;
            bottom_roots.insert(self.uf.find(idx));
        }
        for x in rect.x0..=rect.x1 {
            let idx = rect.vertex_index(Vertex::new(x, rect.y1)) as u32;
            if bottom_roots.contains(&self.uf.find(idx)) {
                return true;
            }
        }
        false
    }

    /// Vertices of the open cluster containing `v`, by BFS (independent of
    /// the union-find, used to cross-check it).
    pub fn cluster_of(&self, v: Vertex) -> HashSet<Vertex> {
        let mut seen: HashSet<Vertex> = [v].into();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for (e, w) in neighbors(u) {
                if self.is_open(e) == Some(true) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// Some vertex of `a` is joined to some vertex of `b` by an open path that
/// stays inside `region` (all vertices and edges of the path in the region).
///
/// Endpoint sets are filtered to the region first; sharing a vertex counts
/// as connected.
pub fn connection_in_region(
    sample: &PercSample,
    a: &HashSet<Vertex>,
    b: &HashSet<Vertex>,
    region: &Region,
) -> bool {
    let targets: HashSet<Vertex> = b.iter().copied().filter(|v| region.contains_vertex(*v)).collect();
    if targets.is_empty() {
        return false;
    }
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    for &v in a {
        if region.contains_vertex(v) && seen.insert(v) {
            if targets.contains(&v) {
                return true;
            }
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for (e, w) in neighbors(u) {
            if !region.contains_vertex(w) || !region.contains_edge(e) {
                continue;
            }
            if sample.is_open(e) == Some(true) && seen.insert(w) {
                if targets.contains(&w) {
                    return true;
                }
                queue.push_back(w);
            }
        }
    }
    false
}

/// Bulk reachability: the set of vertices joined to `seeds` by paths of
/// `usable` edges with every vertex inside `rect`, as a bitmap indexed by
/// [`Rect::vertex_index`].  Seeds outside the rectangle are ignored.
pub(crate) fn reach_in_rect(
    rect: Rect,
    seeds: impl IntoIterator<Item = Vertex>,
    usable: impl Fn(EdgeId) -> bool,
) -> Vec<bool> {
    let mut seen = vec![false; rect.vertex_count()];
    let mut queue: VecDeque<Vertex> = VecDeque::new();
    for v in seeds {
        if rect.contains_vertex(v) && !std::mem::replace(&mut seen[rect.vertex_index(v)], true) {
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for (e, w) in neighbors(u) {
            if !rect.contains_vertex(w) {
                continue;
            }
            let idx = rect.vertex_index(w);
            if !seen[idx] && usable(e) {
                seen[idx] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

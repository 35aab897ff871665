//! Geometry of the square lattice Z² and its planar dual.
//!
//! Vertices are integer points, edges are unordered nearest-neighbour pairs
//! identified by their lexicographically smaller endpoint plus an orientation.
//! The dual lattice is Z² + (1/2, 1/2); a dual vertex `(a, b)` stands for the
//! point `(a + 1/2, b + 1/2)`. Boxes are centred L∞ balls `B(n) = [-n, n]²`,
//! annuli are `Ann(m, n) = B(n) \ B(m)`, and edge membership in a region always
//! means "both endpoints in the region".

use crate::error::{Error, Result};
use std::collections::HashSet;

/// Half-open supported coordinate range: `-COORD_LIMIT <= x < COORD_LIMIT`.
pub const COORD_LIMIT: i32 = 1 << 30;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Vertex {
    pub x: i32,
    pub y: i32,
}

pub const ORIGIN: Vertex = Vertex { x: 0, y: 0 };

impl Vertex {
    pub fn new(x: i32, y: i32) -> Self {
        Vertex { x, y }
    }

    pub fn translate(self, dx: i32, dy: i32) -> Self {
        Vertex { x: self.x + dx, y: self.y + dy }
    }

    /// L∞ norm, i.e. the smallest n with `self` in B(n).
    pub fn norm(self) -> i32 {
        self.x.abs().max(self.y.abs())
    }

    pub fn in_range(self) -> bool {
        (-COORD_LIMIT..COORD_LIMIT).contains(&self.x) && (-COORD_LIMIT..COORD_LIMIT).contains(&self.y)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// An edge of Z², identified by its lexicographically smaller endpoint.
///
/// A `Horizontal` edge joins `base` to `base + (1,0)`, a `Vertical` edge joins
/// `base` to `base + (0,1)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct EdgeId {
    pub base: Vertex,
    pub orient: Orientation,
}

impl EdgeId {
    pub fn horizontal(base: Vertex) -> Self {
        EdgeId { base, orient: Orientation::Horizontal }
    }

    pub fn vertical(base: Vertex) -> Self {
        EdgeId { base, orient: Orientation::Vertical }
    }

    pub fn endpoints(self) -> (Vertex, Vertex) {
        match self.orient {
            Orientation::Horizontal => (self.base, self.base.translate(1, 0)),
            Orientation::Vertical => (self.base, self.base.translate(0, 1)),
        }
    }

    /// The endpoint other than `v`. Panics if `v` is not an endpoint.
    pub fn opposite(self, v: Vertex) -> Vertex {
        let (a, b) = self.endpoints();
        if v == a {
            b
        } else {
            assert_eq!(v, b, "vertex is not an endpoint of the edge");
            a
        }
    }

    pub fn translate(self, dx: i32, dy: i32) -> Self {
        EdgeId { base: self.base.translate(dx, dy), orient: self.orient }
    }

    /// Largest endpoint norm; the edge lies in B(n) iff `norm() <= n`.
    pub fn norm(self) -> i32 {
        let (a, b) = self.endpoints();
        a.norm().max(b.norm())
    }

    /// Smallest endpoint norm; the edge touches B(k) iff `inner_norm() <= k`.
    pub fn inner_norm(self) -> i32 {
        let (a, b) = self.endpoints();
        a.norm().min(b.norm())
    }

    /// Packs the edge into a single 64-bit code: one orientation bit above two
    /// 31-bit offset coordinates. A bijection on the supported range.
    pub fn code(self) -> u64 {
        self.try_code().expect("edge coordinates out of supported range")
    }

    pub fn try_code(self) -> Result<u64> {
        let (a, b) = self.endpoints();
        if !a.in_range() || !b.in_range() {
            return Err(Error::CoordinateRange { x: b.x as i64, y: b.y as i64 });
        }
        let ox = (self.base.x as i64 + COORD_LIMIT as i64) as u64;
        let oy = (self.base.y as i64 + COORD_LIMIT as i64) as u64;
        let bit = match self.orient {
            Orientation::Horizontal => 0u64,
            Orientation::Vertical => 1u64,
        };
        Ok((bit << 62) | (ox << 31) | oy)
    }

    pub fn from_code(code: u64) -> Self {
        let orient = if code >> 62 == 0 { Orientation::Horizontal } else { Orientation::Vertical };
        let ox = (code >> 31) & ((1 << 31) - 1);
        let oy = code & ((1 << 31) - 1);
        EdgeId {
            base: Vertex::new(
                (ox as i64 - COORD_LIMIT as i64) as i32,
                (oy as i64 - COORD_LIMIT as i64) as i32,
            ),
            orient,
        }
    }

    /// The unique dual edge bisecting this edge.
    pub fn dual(self) -> DualEdgeId {
        DualEdgeId { primal: self }
    }
}

/// A dual edge, represented by the primal edge it bisects, so that
/// `primal` of `dual` is the identity by construction.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct DualEdgeId {
    pub primal: EdgeId,
}

impl DualEdgeId {
    /// Endpoints on the dual lattice. A horizontal primal edge at (x, y) is
    /// bisected by the vertical dual edge joining (x+1/2, y-1/2) to
    /// (x+1/2, y+1/2); a vertical primal edge at (x, y) by the horizontal dual
    /// edge joining (x-1/2, y+1/2) to (x+1/2, y+1/2).
    pub fn endpoints(self) -> (DualVertex, DualVertex) {
        let Vertex { x, y } = self.primal.base;
        match self.primal.orient {
            Orientation::Horizontal => (DualVertex::new(x, y - 1), DualVertex::new(x, y)),
            Orientation::Vertical => (DualVertex::new(x - 1, y), DualVertex::new(x, y)),
        }
    }
}

/// Vertex of the dual lattice: `(a, b)` stands for the point (a+1/2, b+1/2).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct DualVertex {
    pub a: i32,
    pub b: i32,
}

fn half_ring(c: i32) -> i32 {
    c.max(-c - 1)
}

impl DualVertex {
    pub fn new(a: i32, b: i32) -> Self {
        DualVertex { a, b }
    }

    /// Ring index r: the point lies at L∞ distance r + 1/2 from the origin,
    /// strictly between the vertex rings r and r + 1.
    pub fn ring(self) -> i32 {
        half_ring(self.a).max(half_ring(self.b))
    }

    /// The four adjacent dual vertices with their connecting dual edges,
    /// in E, N, W, S order.
    pub fn neighbors(self) -> [(DualEdgeId, DualVertex); 4] {
        let DualVertex { a, b } = self;
        // East/west dual edges bisect vertical primal edges, north/south ones
        // bisect horizontal primal edges.
        [
            (EdgeId::vertical(Vertex::new(a + 1, b)).dual(), DualVertex::new(a + 1, b)),
            (EdgeId::horizontal(Vertex::new(a, b + 1)).dual(), DualVertex::new(a, b + 1)),
            (EdgeId::vertical(Vertex::new(a, b)).dual(), DualVertex::new(a - 1, b)),
            (EdgeId::horizontal(Vertex::new(a, b)).dual(), DualVertex::new(a, b - 1)),
        ]
    }
}

/// The four edges incident to `v` with their opposite endpoints, in the fixed
/// deterministic order E, N, W, S.
pub fn neighbors(v: Vertex) -> [(EdgeId, Vertex); 4] {
    try_neighbors(v).expect("vertex neighbourhood out of supported coordinate range")
}

pub fn try_neighbors(v: Vertex) -> Result<[(EdgeId, Vertex); 4]> {
    if !v.in_range()
        || v.x + 1 >= COORD_LIMIT
        || v.y + 1 >= COORD_LIMIT
        || v.x - 1 < -COORD_LIMIT
        || v.y - 1 < -COORD_LIMIT
    {
        return Err(Error::CoordinateRange { x: v.x as i64, y: v.y as i64 });
    }
    Ok([
        (EdgeId::horizontal(v), v.translate(1, 0)),
        (EdgeId::vertical(v), v.translate(0, 1)),
        (EdgeId::horizontal(v.translate(-1, 0)), v.translate(-1, 0)),
        (EdgeId::vertical(v.translate(0, -1)), v.translate(0, -1)),
    ])
}

/// Outer boundary of a cluster: all edges not in `edges` with at least one
/// endpoint in `cluster`. `edges` is expected to be a subset of the edges
/// induced on `cluster`.
pub fn outer_boundary(cluster: &HashSet<Vertex>, edges: &HashSet<EdgeId>) -> HashSet<EdgeId> {
    let mut out = HashSet::new();
    for &v in cluster {
        for (e, _) in neighbors(v) {
            if !edges.contains(&e) {
                out.insert(e);
            }
        }
    }
    out
}

/// The centred box B(v, n) = v + [-n, n]².
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LatticeBox {
    pub center: Vertex,
    pub radius: i32,
}

impl LatticeBox {
    /// B(n) around the origin.
    pub fn origin(radius: i32) -> Self {
        assert!(radius >= 0);
        LatticeBox { center: ORIGIN, radius }
    }

    pub fn centered(center: Vertex, radius: i32) -> Self {
        assert!(radius >= 0);
        LatticeBox { center, radius }
    }

    pub fn contains_vertex(&self, v: Vertex) -> bool {
        (v.x - self.center.x).abs().max((v.y - self.center.y).abs()) <= self.radius
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        let (a, b) = e.endpoints();
        self.contains_vertex(a) && self.contains_vertex(b)
    }

    /// Vertices of the box with a neighbour outside it.
    pub fn is_boundary_vertex(&self, v: Vertex) -> bool {
        (v.x - self.center.x).abs().max((v.y - self.center.y).abs()) == self.radius
    }
}

/// The origin-centred annulus Ann(m, n) = B(n) \ B(m), m < n.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Annulus {
    pub inner: i32,
    pub outer: i32,
}

impl Annulus {
    pub fn new(inner: i32, outer: i32) -> Self {
        assert!(0 <= inner && inner < outer, "annulus requires 0 <= inner < outer");
        Annulus { inner, outer }
    }

    pub fn contains_vertex(&self, v: Vertex) -> bool {
        let r = v.norm();
        self.inner < r && r <= self.outer
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        let (a, b) = e.endpoints();
        self.contains_vertex(a) && self.contains_vertex(b)
    }
}

/// Axis-aligned rectangle of vertices [x0, x1] × [y0, y1], used both for
/// crossing rectangles and as sampling windows. Provides dense indexing of its
/// vertices and edges for bitmask and union-find storage.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        assert!(x0 <= x1 && y0 <= y1, "empty rectangle");
        Rect { x0, y0, x1, y1 }
    }

    pub fn from_box(b: LatticeBox) -> Self {
        Rect::new(
            b.center.x - b.radius,
            b.center.y - b.radius,
            b.center.x + b.radius,
            b.center.y + b.radius,
        )
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0) as usize + 1
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0) as usize + 1
    }

    pub fn contains_vertex(&self, v: Vertex) -> bool {
        self.x0 <= v.x && v.x <= self.x1 && self.y0 <= v.y && v.y <= self.y1
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        let (a, b) = e.endpoints();
        self.contains_vertex(a) && self.contains_vertex(b)
    }

    pub fn vertex_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn vertex_index(&self, v: Vertex) -> usize {
        debug_assert!(self.contains_vertex(v));
        (v.y - self.y0) as usize * self.width() + (v.x - self.x0) as usize
    }

    pub fn vertex_at(&self, idx: usize) -> Vertex {
        let w = self.width();
        Vertex::new(self.x0 + (idx % w) as i32, self.y0 + (idx / w) as i32)
    }

    pub fn horizontal_edge_count(&self) -> usize {
        (self.width() - 1) * self.height()
    }

    pub fn edge_count(&self) -> usize {
        self.horizontal_edge_count() + self.width() * (self.height() - 1)
    }

    pub fn edge_index(&self, e: EdgeId) -> usize {
        debug_assert!(self.contains_edge(e));
        let Vertex { x, y } = e.base;
        match e.orient {
            Orientation::Horizontal => {
                (y - self.y0) as usize * (self.width() - 1) + (x - self.x0) as usize
            }
            Orientation::Vertical => {
                self.horizontal_edge_count()
                    + (y - self.y0) as usize * self.width()
                    + (x - self.x0) as usize
            }
        }
    }

    /// All edges with both endpoints in the rectangle, horizontals first.
    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        let r = *self;
        let horiz = (r.y0..=r.y1)
            .flat_map(move |y| (r.x0..r.x1).map(move |x| EdgeId::horizontal(Vertex::new(x, y))));
        let vert = (r.y0..r.y1)
            .flat_map(move |y| (r.x0..=r.x1).map(move |x| EdgeId::vertical(Vertex::new(x, y))));
        horiz.chain(vert)
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        let r = *self;
        (r.y0..=r.y1).flat_map(move |y| (r.x0..=r.x1).map(move |x| Vertex::new(x, y)))
    }
}

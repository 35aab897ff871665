//! Deterministic i.i.d. edge weights.
//!
//! Every edge carries a uniform weight in [0,1) computed on demand as a strong
//! 64-bit hash of (seed, edge code): no stateful stream, O(1) memory on the
//! infinite lattice, and bit-for-bit reproducibility across platforms and
//! worker counts. The decomposed view splits a weight at threshold p into a
//! Bernoulli(p) bit plus conditionally uniform coordinates on [0,p] and (p,1],
//! using a domain-separated second hash stream for the fresh coordinate.

use crate::error::{invalid, Result};
use crate::lattice::EdgeId;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Bond percolation on Z² is critical at 1/2.
pub const P_C: f64 = 0.5;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const DOMAIN_WEIGHT: u64 = 0x77e1_9f6d_3a5c_0b21;
const DOMAIN_FRESH: u64 = 0xd1b5_4a32_d192_ed03;
const DOMAIN_TRIAL: u64 = 0x8cb9_2ba7_2f3d_8dd7;

/// Finalizer of the splitmix64 generator: a bijective avalanche mix.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Top 53 bits mapped to [0, 1).
pub fn unit_from_bits(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Top 53 bits mapped to (0, 1].
fn unit_pos_from_bits(h: u64) -> f64 {
    ((h >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives the weight seed for trial `i` of an ensemble keyed by `seed0`.
/// Mixed, never sequential, so trial streams do not overlap.
pub fn trial_seed(seed0: u64, i: u64) -> u64 {
    mix64(seed0 ^ mix64(i ^ DOMAIN_TRIAL))
}

/// Anything that can answer weight queries for edges. The invasion engine and
/// the percolation samplers are generic over this, which lets tests drive them
/// with hand-built fixture fields.
pub trait WeightSource {
    fn weight(&self, e: EdgeId) -> f64;

    /// Identifier recorded in trace headers; fixtures may return 0.
    fn seed_id(&self) -> u64 {
        0
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub enum Mode {
    Plain,
    /// Carries the decomposition threshold used by the modified invasion.
    Decomposed { p: f64 },
}

/// The infinite random field: weight(e) = hash(seed, code(e)) in [0,1).
#[derive(Clone, Copy, Debug)]
pub struct WeightField {
    pub seed: u64,
    pub mode: Mode,
}

/// One edge weight split at threshold p.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Decomposition {
    /// Bernoulli(p) bit: true iff the weight is ≤ p.
    pub eta: bool,
    /// Uniform on [0, p]; equals the weight when eta is true.
    pub u1: f64,
    /// Uniform on (p, 1]; equals the weight when eta is false.
    pub u2: f64,
}

impl WeightField {
    pub fn new(seed: u64) -> Self {
        WeightField { seed, mode: Mode::Plain }
    }

    pub fn decomposed(seed: u64, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) || p <= 0.0 {
            return Err(invalid(format!("decomposition threshold must lie in (0,1), got {p}")));
        }
        Ok(WeightField { seed, mode: Mode::Decomposed { p } })
    }

    fn raw(&self, e: EdgeId) -> u64 {
        mix64(self.seed ^ mix64(e.code() ^ DOMAIN_WEIGHT))
    }

    /// Domain-separated second stream, independent of the weight stream, for
    /// the fresh conditional coordinate in `decompose`.
    fn raw_fresh(&self, e: EdgeId) -> u64 {
        mix64(self.seed ^ DOMAIN_FRESH ^ mix64(e.code() ^ DOMAIN_FRESH))
    }

    /// Splits ω(e) at threshold p. Reconstruction is exact: the weight equals
    /// u1 when eta is true and u2 otherwise, bit for bit.
    pub fn decompose(&self, e: EdgeId, p: f64) -> Decomposition {
        let w = self.weight(e);
        let fresh = self.raw_fresh(e);
        if w <= p {
            Decomposition { eta: true, u1: w, u2: p + (1.0 - p) * unit_pos_from_bits(fresh) }
        } else {
            Decomposition { eta: false, u1: p * unit_from_bits(fresh), u2: w }
        }
    }

    /// True iff e is p-open, i.e. ω(e) ≤ p.
    pub fn open(&self, e: EdgeId, p: f64) -> bool {
        self.weight(e) <= p
    }

    /// The decomposition threshold, when the field is in decomposed mode.
    pub fn decomposition_p(&self) -> Option<f64> {
        match self.mode {
            Mode::Plain => None,
            Mode::Decomposed { p } => Some(p),
        }
    }
}

impl WeightSource for WeightField {
    fn weight(&self, e: EdgeId) -> f64 {
        unit_from_bits(self.raw(e))
    }

    fn seed_id(&self) -> u64 {
        self.seed
    }
}

/// Explicit weight table with a default for unlisted edges; the fixture field
/// used throughout the tests. Ties on the default value are resolved by edge
/// code, as everywhere else.
#[derive(Clone, Debug)]
pub struct MapField {
    pub entries: HashMap<EdgeId, f64>,
    pub default: f64,
}

impl MapField {
    pub fn new(entries: HashMap<EdgeId, f64>, default: f64) -> Self {
        MapField { entries, default }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (EdgeId, f64)>, default: f64) -> Self {
        MapField { entries: pairs.into_iter().collect(), default }
    }
}

impl WeightSource for MapField {
    fn weight(&self, e: EdgeId) -> f64 {
        self.entries.get(&e).copied().unwrap_or(self.default)
    }
}

/// Small deterministic generator for auxiliary randomness (bootstrap
/// resampling, random fixtures in tests). Plain splitmix64.
#[derive(Clone, Debug)]
pub struct Mix64Stream {
    state: u64,
}

impl Mix64Stream {
    pub fn new(seed: u64) -> Self {
        Mix64Stream { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    pub fn next_unit(&mut self) -> f64 {
        unit_from_bits(self.next_u64())
    }

    /// Uniform index in [0, n). Modulo bias is negligible for n ≪ 2^64.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }
}

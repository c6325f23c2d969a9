//! `(eps, h)`-quasirandomness checks, rooted pattern extension counting, and
//! the linked-triple census.
//!
//! A graph `G` with density `d` is `(eps, h)`-quasirandom when every vertex
//! set `A` with `|A| <= h` has `(1 ± eps) d^{|A|} n` common neighbours. When
//! the target `d^{|A|} n` is zero the set passes exactly when the common
//! neighbourhood is empty (the two-sided band collapses to `{0}`).

use crate::bitset::BitSet;
use crate::design::{LeaveGraph, Vertex};
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

const EXHAUSTIVE_GUARD: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Exhaustive,
    /// `k` uniformly random sets per size; explicitly probabilistic.
    Sampled(usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasirandomReport {
    pub passed: bool,
    pub eps: f64,
    pub h: usize,
    pub density: f64,
    /// A set attaining the worst ratio.
    pub worst_set: Vec<Vertex>,
    /// `|∩ N(w)| / (d^{|A|} n)` at the worst set (`NaN` only on empty input).
    pub worst_ratio: f64,
    pub mode: CheckMode,
    /// Total number of sets examined.
    pub samples: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuasirandomError {
    #[error("exhaustive enumeration infeasible: C({n}, {h}) exceeds guard")]
    TooLarge { n: usize, h: usize },
    #[error("roots do not embed the rooted subgraph")]
    InvalidRoots,
    #[error("pattern has more than {limit} free vertices")]
    PatternTooLarge { limit: usize },
}

/// Edge density `m / C(n,2)`.
pub fn density(g: &LeaveGraph) -> f64 {
    let n = g.n();
    assert!(n >= 2, "density needs at least two vertices");
    g.edge_count() as f64 / (n * (n - 1) / 2) as f64
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Checks `(eps, h)`-quasirandomness of `g`.
///
/// Exhaustive mode enumerates every set of size `1..=h` (guarded by
/// `C(n, h) <= 1e7`); sampled mode draws `k` uniform sets per size from a
/// seeded stream and is labelled probabilistic in the report.
pub fn check_quasirandom(
    g: &LeaveGraph,
    eps: f64,
    h: usize,
    mode: CheckMode,
    rng: &mut impl Rng,
) -> Result<QuasirandomReport, QuasirandomError> {
    assert!(h >= 1, "h must be at least 1");
    let n = g.n();
    if let CheckMode::Exhaustive = mode {
        if binomial(n, h) > EXHAUSTIVE_GUARD {
            return Err(QuasirandomError::TooLarge { n, h });
        }
    }
    let d = density(g);
    let mut worst_dev = -1.0f64;
    let mut worst_ratio = f64::NAN;
    let mut worst_set = Vec::new();
    let mut passed = true;
    let mut examined = 0usize;

    let mut consider = |set: &[Vertex], g: &LeaveGraph| {
        let mut common = g.neighbors(set[0]).clone();
        for &w in &set[1..] {
            common.intersect_with(g.neighbors(w));
        }
        let y = common.count_ones() as f64;
        let target = d.powi(set.len() as i32) * n as f64;
        // Zero-target convention: a nonempty intersection is an
        // unconditional failure, an empty one passes with ratio 1.
        let (ratio, dev) = if target == 0.0 {
            if y == 0.0 {
                (1.0, 0.0)
            } else {
                (f64::INFINITY, f64::INFINITY)
            }
        } else {
            let r = y / target;
            (r, (r - 1.0).abs())
        };
        if dev > worst_dev {
            worst_dev = dev;
            worst_ratio = ratio;
            worst_set = set.to_vec();
        }
        if dev > eps {
            passed = false;
        }
    };

    match mode {
        CheckMode::Exhaustive => {
            let mut set = Vec::with_capacity(h);
            for size in 1..=h.min(n) {
                for_each_subset(n, size, &mut set, &mut |s| {
                    consider(s, g);
                    examined += 1;
                });
            }
        }
        CheckMode::Sampled(k) => {
            for size in 1..=h.min(n) {
                for _ in 0..k {
                    let set: Vec<usize> = sample(rng, n, size).into_vec();
                    consider(&set, g);
                    examined += 1;
                }
            }
        }
    }

    Ok(QuasirandomReport {
        passed,
        eps,
        h,
        density: d,
        worst_set,
        worst_ratio,
        mode,
        samples: examined,
    })
}

fn for_each_subset(n: usize, size: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(
        n: usize,
        size: usize,
        start: usize,
        buf: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if buf.len() == size {
            f(buf);
            return;
        }
        let remaining = size - buf.len();
        for v in start..=(n - remaining) {
            buf.push(v);
            rec(n, size, v + 1, buf, f);
            buf.pop();
        }
    }
    buf.clear();
    rec(n, size, 0, buf, f);
}

// ---------------------------------------------------------------------------
// Rooted pattern extension counting
// ---------------------------------------------------------------------------

/// A small graph pattern with labelled vertices.
#[derive(Clone, Debug)]
pub struct Pattern {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Pattern {
    pub fn new(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Pattern {
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        for &(u, v) in &edges {
            assert!(u != v && v < vertex_count, "bad pattern edge ({u},{v})");
        }
        Pattern { vertex_count, edges }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn empty() -> Pattern {
        Pattern::new(0, [])
    }

    pub fn single_edge() -> Pattern {
        Pattern::new(2, [(0, 1)])
    }

    pub fn triangle() -> Pattern {
        Pattern::new(3, [(0, 1), (0, 2), (1, 2)])
    }

    /// Adds an isolated vertex, returning its index.
    pub fn add_isolated_vertex(&mut self) -> usize {
        self.vertex_count += 1;
        self.vertex_count - 1
    }

    /// The 12-vertex absorber gadget viewed as a graph: each of its 7 triples
    /// becomes a triangle. Vertex layout: `x y z x1 x2 y1 y2 z1 z2 wx wy wz`
    /// (so the rooted-triple vertices are indices `0..9`).
    pub fn absorber_graph() -> Pattern {
        let (x, y, z) = (0, 1, 2);
        let (x1, x2, y1, y2, z1, z2) = (3, 4, 5, 6, 7, 8);
        let (wx, wy, wz) = (9, 10, 11);
        let triples = [
            [x, x1, x2],
            [y, y1, y2],
            [z, z1, z2],
            [wx, wy, wz],
            [x1, y2, wz],
            [y1, z2, wx],
            [z1, x2, wy],
        ];
        let mut edges = Vec::new();
        for t in triples {
            edges.push((t[0], t[1]));
            edges.push((t[0], t[2]));
            edges.push((t[1], t[2]));
        }
        Pattern::new(12, edges)
    }
}

const FREE_VERTEX_GUARD: usize = 8;

/// Exact number of ways to extend the partial embedding `roots` (pattern
/// vertex `i` -> `roots[i]`) to a full embedding of `pattern` in `g`
/// (injective on vertices, pattern edges to graph edges).
///
/// Guarded by the number of free vertices (`v(H) - |roots| <= 8`), which is
/// what controls the backtracking depth.
pub fn count_extensions(
    g: &LeaveGraph,
    pattern: &Pattern,
    roots: &[Vertex],
) -> Result<u64, QuasirandomError> {
    let k = roots.len();
    let v = pattern.vertex_count();
    assert!(k <= v, "more roots than pattern vertices");
    if v - k > FREE_VERTEX_GUARD {
        return Err(QuasirandomError::PatternTooLarge {
            limit: FREE_VERTEX_GUARD,
        });
    }
    // Roots must injectively embed the rooted subgraph.
    for i in 0..k {
        if roots[i] >= g.n() {
            return Err(QuasirandomError::InvalidRoots);
        }
        for j in 0..i {
            if roots[i] == roots[j] {
                return Err(QuasirandomError::InvalidRoots);
            }
        }
    }
    for &(u, v) in pattern.edges() {
        if u < k && v < k && !g.has_edge(roots[u], roots[v]) {
            return Err(QuasirandomError::InvalidRoots);
        }
    }

    let mut image: Vec<Vertex> = roots.to_vec();
    let mut used = BitSet::new(g.n());
    for &r in roots {
        used.insert(r);
    }
    Ok(extend(g, pattern, &mut image, &mut used))
}

fn extend(g: &LeaveGraph, pattern: &Pattern, image: &mut Vec<Vertex>, used: &mut BitSet) -> u64 {
    let next = image.len();
    if next == pattern.vertex_count() {
        return 1;
    }
    // Candidates: common neighbourhood of the already-embedded pattern
    // neighbours of `next`, or every unused vertex if there are none.
    let mut candidates: Option<BitSet> = None;
    for &(u, v) in pattern.edges() {
        let other = match (u == next, v == next) {
            (true, _) if v < next => v,
            (_, true) if u < next => u,
            _ => continue,
        };
        match candidates.as_mut() {
            None => candidates = Some(g.neighbors(image[other]).clone()),
            Some(c) => c.intersect_with(g.neighbors(image[other])),
        }
    }
    let mut total = 0u64;
    match candidates {
        Some(c) => {
            for w in c.iter_ones() {
                if !used.contains(w) {
                    used.insert(w);
                    image.push(w);
                    total += extend(g, pattern, image, used);
                    image.pop();
                    used.remove(w);
                }
            }
        }
        None => {
            for w in 0..g.n() {
                if !used.contains(w) {
                    used.insert(w);
                    image.push(w);
                    total += extend(g, pattern, image, used);
                    image.pop();
                    used.remove(w);
                }
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Linked triples
// ---------------------------------------------------------------------------

/// Ordered pair of vertices.
pub type OrderedPair = (Vertex, Vertex);

/// Exact number of choices `((x1,x2), (y1,y2), (z1,z2))` in `X x Y x Z` such
/// that `{x1,y2}`, `{y1,z2}` and `{z1,x2}` are all edges of `g`.
///
/// The pairs within each family are expected to be pairwise disjoint (the
/// lemma's setting); the count itself does not depend on that assumption.
pub fn linked_triples(
    g: &LeaveGraph,
    xs: &[OrderedPair],
    ys: &[OrderedPair],
    zs: &[OrderedPair],
) -> u64 {
    // For each y: the z-indices with {y1, z2} an edge; for each x: the
    // z-indices with {z1, x2} an edge. Sum intersection sizes over edges
    // {x1, y2}.
    let mut z_of_y: Vec<BitSet> = Vec::with_capacity(ys.len());
    for &(y1, _) in ys {
        let mut row = BitSet::new(zs.len());
        for (zi, &(_, z2)) in zs.iter().enumerate() {
            if g.has_edge(y1, z2) {
                row.insert(zi);
            }
        }
        z_of_y.push(row);
    }
    let mut z_of_x: Vec<BitSet> = Vec::with_capacity(xs.len());
    for &(_, x2) in xs {
        let mut row = BitSet::new(zs.len());
        for (zi, &(z1, _)) in zs.iter().enumerate() {
            if g.has_edge(z1, x2) {
                row.insert(zi);
            }
        }
        z_of_x.push(row);
    }
    let mut total = 0u64;
    for (xi, &(x1, _)) in xs.iter().enumerate() {
        for (yi, &(_, y2)) in ys.iter().enumerate() {
            if g.has_edge(x1, y2) {
                total += z_of_y[yi].intersection_count(&z_of_x[xi]) as u64;
            }
        }
    }
    total
}

/// Nominal quasirandom lower bound `d^3 |X||Y||Z| / 8` for the linked-triple
/// count; the lemma's `o(n^3)` slack is reported by the caller, not asserted.
pub fn linked_triples_nominal(g: &LeaveGraph, nx: usize, ny: usize, nz: usize) -> f64 {
    density(g).powi(3) * (nx * ny * nz) as f64 / 8.0
}

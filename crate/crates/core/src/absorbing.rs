//! The absorber gadget, resilient templates, absorbing structures, and the
//! constructive perfect-matching pipeline.
//!
//! An absorber for an ordered root triple `(x, y, z)` is a 12-vertex,
//! 7-triple gadget that contributes to a perfect matching in two ways: the
//! covering matching (4 triples over all 12 vertices) or the non-covering
//! matching (3 triples over the 9 external vertices only). A resilient
//! template dictates the relative positions of absorbers; its certificate is
//! exhaustive: a perfect matching is verified to survive the removal of
//! every half-subset of the flexible set.

use crate::bitset::BitSet;
use crate::design::{PartialSystem, Triple, Vertex};
use crate::matching::{find_perfect_matching, Matching};
use crate::removal::seed_for_stream;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbsorbingError {
    #[error("template flexible set size must be even and in 2..=16, got {z_size}")]
    BadFlexibleSize { z_size: usize },
    #[error("template certification failed after {retries} retries")]
    CertificationFailed { retries: usize },
}

// ---------------------------------------------------------------------------
// Absorber
// ---------------------------------------------------------------------------

/// Fully labelled absorber for the ordered root `(x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Absorber {
    pub root: (Vertex, Vertex, Vertex),
    /// `(x1, x2)`: the other two vertices of the rooted triple at `x`, in
    /// the orientation used by the linking pattern; likewise for y, z.
    pub x_pair: (Vertex, Vertex),
    pub y_pair: (Vertex, Vertex),
    pub z_pair: (Vertex, Vertex),
    /// `(wx, wy, wz)`.
    pub hub: (Vertex, Vertex, Vertex),
}

impl Absorber {
    pub fn vertices(&self) -> [Vertex; 12] {
        let (x, y, z) = self.root;
        let (x1, x2) = self.x_pair;
        let (y1, y2) = self.y_pair;
        let (z1, z2) = self.z_pair;
        let (wx, wy, wz) = self.hub;
        [x, y, z, x1, x2, y1, y2, z1, z2, wx, wy, wz]
    }

    pub fn external_vertices(&self) -> [Vertex; 9] {
        let (x1, x2) = self.x_pair;
        let (y1, y2) = self.y_pair;
        let (z1, z2) = self.z_pair;
        let (wx, wy, wz) = self.hub;
        [x1, x2, y1, y2, z1, z2, wx, wy, wz]
    }

    /// `e_x, e_y, e_z`.
    pub fn rooted_edges(&self) -> [Triple; 3] {
        let (x, y, z) = self.root;
        [
            Triple::new(x, self.x_pair.0, self.x_pair.1),
            Triple::new(y, self.y_pair.0, self.y_pair.1),
            Triple::new(z, self.z_pair.0, self.z_pair.1),
        ]
    }

    /// `e_*, e_1, e_2, e_3`.
    pub fn external_edges(&self) -> [Triple; 4] {
        let (x1, x2) = self.x_pair;
        let (y1, y2) = self.y_pair;
        let (z1, z2) = self.z_pair;
        let (wx, wy, wz) = self.hub;
        [
            Triple::new(wx, wy, wz),
            Triple::new(x1, y2, wz),
            Triple::new(y1, z2, wx),
            Triple::new(z1, x2, wy),
        ]
    }

    pub fn all_edges(&self) -> [Triple; 7] {
        let r = self.rooted_edges();
        let e = self.external_edges();
        [r[0], r[1], r[2], e[0], e[1], e[2], e[3]]
    }

    /// The 4 triples covering all 12 vertices.
    pub fn covering_matching(&self) -> [Triple; 4] {
        let r = self.rooted_edges();
        [r[0], r[1], r[2], self.external_edges()[0]]
    }

    /// The 3 triples covering exactly the 9 external vertices.
    pub fn non_covering_matching(&self) -> [Triple; 3] {
        let e = self.external_edges();
        [e[1], e[2], e[3]]
    }

    /// All 7 labelled triples, or `None` if some would be degenerate.
    fn edges_checked(&self) -> Option<[Triple; 7]> {
        let (x, y, z) = self.root;
        let (x1, x2) = self.x_pair;
        let (y1, y2) = self.y_pair;
        let (z1, z2) = self.z_pair;
        let (wx, wy, wz) = self.hub;
        Some([
            Triple::try_new(x, x1, x2).ok()?,
            Triple::try_new(y, y1, y2).ok()?,
            Triple::try_new(z, z1, z2).ok()?,
            Triple::try_new(wx, wy, wz).ok()?,
            Triple::try_new(x1, y2, wz).ok()?,
            Triple::try_new(y1, z2, wx).ok()?,
            Triple::try_new(z1, x2, wy).ok()?,
        ])
    }
}

/// Checks every gadget invariant of `a` within `s`: 12 distinct vertices,
/// all 7 triples present, the covering matching partitioning the 12, and
/// the non-covering matching partitioning the 9 externals.
pub fn verify_absorber(s: &PartialSystem, a: &Absorber) -> bool {
    let vs = a.vertices();
    for (i, &u) in vs.iter().enumerate() {
        if u >= s.n() || vs[..i].contains(&u) {
            return false;
        }
    }
    let Some(edges) = a.edges_checked() else {
        return false;
    };
    if edges.iter().any(|t| !s.has_triple(t)) {
        return false;
    }
    // Covering matching partitions the full vertex set of the gadget.
    let mut covered = std::collections::BTreeSet::new();
    for t in a.covering_matching() {
        for v in t.vertices() {
            if !covered.insert(v) {
                return false;
            }
        }
    }
    if covered != vs.iter().copied().collect() {
        return false;
    }
    // Non-covering matching partitions the externals.
    let mut covered = std::collections::BTreeSet::new();
    for t in a.non_covering_matching() {
        for v in t.vertices() {
            if !covered.insert(v) {
                return false;
            }
        }
    }
    covered == a.external_vertices().iter().copied().collect()
}

/// Externally vertex-disjoint absorbers rooted at `(x, y, z)`, greedily
/// collected in seeded-random candidate order, at most `limit`.
pub fn find_absorbers(
    s: &PartialSystem,
    x: Vertex,
    y: Vertex,
    z: Vertex,
    limit: usize,
    seed: u64,
) -> Vec<Absorber> {
    let mut rng = rng::root(seed);
    let mut used = BitSet::new(s.n());
    let mut out = Vec::new();
    find_absorbers_avoiding(s, (x, y, z), limit, &mut used, &mut rng, &mut out);
    out
}

/// Ordered pairs `(a, b)` such that `{v, a, b}` is a triple of `s`.
fn pairs_at(s: &PartialSystem, v: Vertex) -> Vec<(Vertex, Vertex)> {
    let mut out = Vec::new();
    for t in s.triples() {
        if t.contains(v) {
            let others: Vec<Vertex> = t.vertices().into_iter().filter(|&u| u != v).collect();
            out.push((others[0], others[1]));
            out.push((others[1], others[0]));
        }
    }
    out
}

/// Core greedy search. External vertices must avoid `used`; accepted
/// absorbers mark their externals in `used` and are appended to `out`.
fn find_absorbers_avoiding(
    s: &PartialSystem,
    root: (Vertex, Vertex, Vertex),
    limit: usize,
    used: &mut BitSet,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Absorber>,
) {
    if limit == 0 {
        return;
    }
    let (x, y, z) = root;
    if x == y || y == z || x == z {
        return;
    }
    let mut xs = pairs_at(s, x);
    let mut ys = pairs_at(s, y);
    let mut zs = pairs_at(s, z);
    xs.shuffle(rng);
    ys.shuffle(rng);
    zs.shuffle(rng);
    let roots = [x, y, z];
    let bad = |v: Vertex, used: &BitSet| used.contains(v) || roots.contains(&v);

    let found_before = out.len();
    for &(x1, x2) in &xs {
        if out.len() - found_before >= limit {
            return;
        }
        if bad(x1, used) || bad(x2, used) {
            continue;
        }
        'ys: for &(y1, y2) in &ys {
            if bad(y1, used) || bad(y2, used) || [x1, x2].contains(&y1) || [x1, x2].contains(&y2) {
                continue;
            }
            // wz is forced: e_1 = {x1, y2, wz} must be a triple of s.
            let Some((_, t1)) = s.covering(x1, y2) else { continue };
            let Some(wz) = t1.third(x1, y2) else { continue };
            if bad(wz, used) || [x1, x2, y1, y2].contains(&wz) {
                continue;
            }
            for &(z1, z2) in &zs {
                let six = [x1, x2, y1, y2];
                if bad(z1, used) || bad(z2, used) || six.contains(&z1) || six.contains(&z2) {
                    continue;
                }
                if z1 == wz || z2 == wz {
                    continue;
                }
                let Some((_, t2)) = s.covering(y1, z2) else { continue };
                let Some(wx) = t2.third(y1, z2) else { continue };
                let Some((_, t3)) = s.covering(z1, x2) else { continue };
                let Some(wy) = t3.third(z1, x2) else { continue };
                let seen = [x1, x2, y1, y2, z1, z2, wz];
                if bad(wx, used) || seen.contains(&wx) {
                    continue;
                }
                if bad(wy, used) || seen.contains(&wy) || wy == wx {
                    continue;
                }
                // e_* must also be present.
                if !s.has_triple(&Triple::new(wx, wy, wz)) {
                    continue;
                }
                let a = Absorber {
                    root,
                    x_pair: (x1, x2),
                    y_pair: (y1, y2),
                    z_pair: (z1, z2),
                    hub: (wx, wy, wz),
                };
                debug_assert!(verify_absorber(s, &a));
                for v in a.external_vertices() {
                    used.insert(v);
                }
                out.push(a);
                if out.len() - found_before >= limit {
                    return;
                }
                continue 'ys; // externals changed; move to a fresh y pair
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Resilient template
// ---------------------------------------------------------------------------

/// A 3-uniform hypergraph on local vertices `0..vertex_count` whose flexible
/// set survives the removal of any half-subset.
#[derive(Clone, Debug, Serialize)]
pub struct Template {
    pub vertex_count: usize,
    pub hyperedges: Vec<[usize; 3]>,
    /// The flexible set Z (local indices).
    pub flexible: Vec<usize>,
    /// True once every half-subset removal has been checked exhaustively.
    pub certified: bool,
    /// Number of half-subset matchings verified.
    pub checks: usize,
}

/// Perfect matching search on a tiny general hypergraph given as a vertex
/// bitmask; returns the chosen edge indices. Unlike partial systems,
/// template edges may repeat pairs.
fn hypergraph_pm(alive: u32, edges: &[[usize; 3]]) -> Option<Vec<usize>> {
    if alive == 0 {
        return Some(Vec::new());
    }
    let v = alive.trailing_zeros() as usize;
    for (i, e) in edges.iter().enumerate() {
        if !e.contains(&v) {
            continue;
        }
        let mask = (1u32 << e[0]) | (1 << e[1]) | (1 << e[2]);
        if alive & mask == mask {
            if let Some(mut rest) = hypergraph_pm(alive & !mask, edges) {
                rest.push(i);
                return Some(rest);
            }
        }
    }
    None
}

fn half_subsets(z: &[usize]) -> Vec<Vec<usize>> {
    fn rec(z: &[usize], start: usize, half: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == half {
            out.push(cur.clone());
            return;
        }
        for i in start..z.len() {
            cur.push(z[i]);
            rec(z, i + 1, half, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(z, 0, z.len() / 2, &mut Vec::new(), &mut out);
    out
}

/// Builds a certified resilient template with `z_size` flexible vertices.
///
/// The base size is the least `b` with `b + z/2 ≡ 0 (mod 3)`. Construction
/// starts from `multiplier * z_size` random hyperedges over base ∪ Z and
/// repairs each failing half-subset removal by adding the triples of a
/// random partition of the surviving vertices, then re-certifies everything
/// from scratch. Fresh randomness is tried until certification succeeds.
pub fn build_template(
    z_size: usize,
    multiplier: usize,
    seed: u64,
) -> Result<Template, AbsorbingError> {
    if z_size < 2 || z_size % 2 != 0 || z_size > 16 {
        return Err(AbsorbingError::BadFlexibleSize { z_size });
    }
    let half = z_size / 2;
    let base = (3 - half % 3) % 3;
    let vertex_count = base + z_size;
    let flexible: Vec<usize> = (base..vertex_count).collect();
    let retries = 20usize;

    for attempt in 0..retries {
        let mut rng = rng::stream(seed, attempt as u64);
        let mut edges: Vec<[usize; 3]> = Vec::new();
        let mut have = std::collections::BTreeSet::new();
        let mut all: Vec<usize> = (0..vertex_count).collect();
        for _ in 0..multiplier * z_size {
            all.shuffle(&mut rng);
            let mut e = [all[0], all[1], all[2]];
            e.sort_unstable();
            if have.insert(e) {
                edges.push(e);
            }
        }
        // Repair pass: give every failing removal a partition to fall back
        // on.
        let removals = half_subsets(&flexible);
        let full: u32 = (1u32 << vertex_count) - 1;
        for removal in &removals {
            let alive = removal.iter().fold(full, |m, &v| m & !(1u32 << v));
            if hypergraph_pm(alive, &edges).is_some() {
                continue;
            }
            let mut kept: Vec<usize> =
                (0..vertex_count).filter(|v| alive >> v & 1 == 1).collect();
            kept.shuffle(&mut rng);
            for chunk in kept.chunks(3) {
                let mut e = [chunk[0], chunk[1], chunk[2]];
                e.sort_unstable();
                if have.insert(e) {
                    edges.push(e);
                }
            }
        }
        // Exhaustive certification from scratch.
        let mut checks = 0usize;
        let certified = removals.iter().all(|removal| {
            checks += 1;
            let alive = removal.iter().fold(full, |m, &v| m & !(1u32 << v));
            hypergraph_pm(alive, &edges).is_some()
        });
        if certified {
            return Ok(Template {
                vertex_count,
                hyperedges: edges,
                flexible,
                certified: true,
                checks,
            });
        }
    }
    Err(AbsorbingError::CertificationFailed { retries })
}

// ---------------------------------------------------------------------------
// Absorbing structure
// ---------------------------------------------------------------------------

/// A template embedded in a system with one absorber per template hyperedge.
/// The template's own hyperedges describe relative positions only; they are
/// not triples of the structure.
#[derive(Clone, Debug, Serialize)]
pub struct AbsorbingStructure {
    pub template: Template,
    /// Template-local vertex -> system vertex.
    pub vertex_map: Vec<Vertex>,
    /// One absorber per template hyperedge, externally vertex-disjoint.
    pub absorbers: Vec<Absorber>,
}

impl AbsorbingStructure {
    /// System vertices of the flexible set.
    pub fn flexible_vertices(&self) -> Vec<Vertex> {
        self.template
            .flexible
            .iter()
            .map(|&v| self.vertex_map[v])
            .collect()
    }

    /// Every vertex owned by the structure: template images plus all
    /// absorber externals.
    pub fn vertex_set(&self, n: usize) -> BitSet {
        let mut set = BitSet::new(n);
        for &v in &self.vertex_map {
            set.insert(v);
        }
        for a in &self.absorbers {
            for v in a.external_vertices() {
                set.insert(v);
            }
        }
        set
    }

    /// Structure invariants: every absorber verifies, and external sets are
    /// pairwise disjoint and avoid template images (cardinality check).
    pub fn validate(&self, s: &PartialSystem) -> bool {
        if self.absorbers.len() != self.template.hyperedges.len() {
            return false;
        }
        let mut seen = BitSet::new(s.n());
        for &v in &self.vertex_map {
            if seen.contains(v) {
                return false;
            }
            seen.insert(v);
        }
        for a in &self.absorbers {
            if !verify_absorber(s, a) {
                return false;
            }
            for v in a.external_vertices() {
                if seen.contains(v) {
                    return false;
                }
                seen.insert(v);
            }
        }
        seen.count_ones() == self.vertex_map.len() + 9 * self.absorbers.len()
    }
}

fn assemble_structure(
    s: &PartialSystem,
    template: &Template,
    seed: u64,
) -> Option<AbsorbingStructure> {
    let n = s.n();
    if template.vertex_count > n {
        return None;
    }
    let mut rng = rng::root(seed);
    let mut all: Vec<Vertex> = (0..n).collect();
    all.shuffle(&mut rng);
    let vertex_map: Vec<Vertex> = all[..template.vertex_count].to_vec();
    let mut used = BitSet::new(n);
    for &v in &vertex_map {
        used.insert(v);
    }
    let mut absorbers = Vec::with_capacity(template.hyperedges.len());
    for e in &template.hyperedges {
        let root = (vertex_map[e[0]], vertex_map[e[1]], vertex_map[e[2]]);
        let mut found = Vec::new();
        find_absorbers_avoiding(s, root, 1, &mut used, &mut rng, &mut found);
        match found.pop() {
            Some(a) => absorbers.push(a),
            None => return None,
        }
    }
    Some(AbsorbingStructure {
        template: template.clone(),
        vertex_map,
        absorbers,
    })
}

// ---------------------------------------------------------------------------
// Pipeline conditions report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct Cond3Row {
    pub w_size: usize,
    pub induced: usize,
    pub required: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionsReport {
    pub delta: f64,
    pub beta: f64,
    /// Degree-into-Z threshold `6 δ⁵ n`.
    pub cond2_threshold: f64,
    /// Vertices outside Z with Z-degree below the threshold (exact scan).
    pub cond2_low_degree: usize,
    /// Allowance `δ n`.
    pub cond2_allowed: f64,
    pub cond2_pass: bool,
    /// Minimum W size `3 δ⁵ n` below which samples are skipped.
    pub cond3_min_w: f64,
    /// Sampled subsets (probabilistic; exhausting all W is exponential).
    pub cond3_rows: Vec<Cond3Row>,
    pub cond3_pass: bool,
}

/// Evaluates conditions 2 (exact) and 3 (sampled over `samples` random
/// subsets per size in `w_sizes`) for flexible set `z`. Condition 1 — the
/// existence of an absorbing structure — is what the pipeline itself
/// establishes, so it is not re-checked here.
pub fn check_conditions(
    s: &PartialSystem,
    z: &[Vertex],
    delta: f64,
    beta: f64,
    w_sizes: &[usize],
    samples: usize,
    seed: u64,
) -> ConditionsReport {
    let n = s.n();
    let mut zdeg = vec![0usize; n];
    for (i, &a) in z.iter().enumerate() {
        for &b in &z[i + 1..] {
            if let Some((_, t)) = s.covering(a, b) {
                if let Some(w) = t.third(a, b) {
                    if !z.contains(&w) {
                        zdeg[w] += 1;
                    }
                }
            }
        }
    }
    let cond2_threshold = 6.0 * delta.powi(5) * n as f64;
    let cond2_low_degree = (0..n)
        .filter(|&v| !z.contains(&v) && (zdeg[v] as f64) < cond2_threshold)
        .count();
    let cond2_allowed = delta * n as f64;
    let cond3_min_w = 3.0 * delta.powi(5) * n as f64;
    let mut rng = rng::root(seed);
    let mut rows = Vec::new();
    let mut cond3_pass = true;
    for &w_size in w_sizes {
        if (w_size as f64) < cond3_min_w || w_size > n {
            continue; // below the lemma's precondition
        }
        for _ in 0..samples {
            let w: Vec<usize> = rand::seq::index::sample(&mut rng, n, w_size).into_vec();
            let mut in_w = BitSet::new(n);
            for &v in &w {
                in_w.insert(v);
            }
            let induced = s
                .triples()
                .iter()
                .filter(|t| t.vertices().iter().all(|&v| in_w.contains(v)))
                .count();
            let required = (1.0 - beta) * (w_size as f64).powi(3) / (6.0 * n as f64);
            let margin = induced as f64 - required;
            if margin < 0.0 {
                cond3_pass = false;
            }
            rows.push(Cond3Row {
                w_size,
                induced,
                required,
                margin,
            });
        }
    }
    ConditionsReport {
        delta,
        beta,
        cond2_threshold,
        cond2_low_degree,
        cond2_allowed,
        cond2_pass: (cond2_low_degree as f64) <= cond2_allowed,
        cond3_min_w,
        cond3_rows: rows,
        cond3_pass,
    }
}

// ---------------------------------------------------------------------------
// The perfect-matching pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Divisibility,
    TemplateBuild,
    StructureAssembly,
    GreedyCover,
    MainStep,
    FlexiblePatch,
    CoverFlexible,
    TemplateMatching,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[error("pipeline failed at stage {stage:?}")]
pub struct PipelineFailure {
    pub stage: PipelineStage,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PipelineParams {
    pub delta: f64,
    pub beta: f64,
    /// Flexible set size; 0 degenerates to pure greedy. `None` picks the
    /// desk default for the order.
    pub z_size: Option<usize>,
    pub seed: u64,
    /// Restart budget for the greedy stages (per structure embedding).
    pub restarts: usize,
}

impl PipelineParams {
    pub fn new(seed: u64) -> PipelineParams {
        PipelineParams {
            delta: 0.15,
            beta: 0.5,
            z_size: None,
            seed,
            restarts: 2000,
        }
    }
}

/// Desk default flexible-set size: the smallest workable template (z = 4:
/// 5 template vertices + 54 absorber externals) once the order can spare
/// them; pure greedy below.
pub fn default_z_size(n: usize) -> usize {
    if n >= 90 {
        4
    } else {
        0
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub matching: Matching,
    pub stage_log: Vec<String>,
    /// False when the result came from the degenerate greedy path.
    pub used_absorbing_structure: bool,
    pub structure: Option<AbsorbingStructure>,
}

/// Builds a perfect matching of the complete system `s` through the
/// absorbing pipeline: assemble the structure, greedily cover the
/// unpatchable vertices, run the main step down to the parity-forced
/// reserve, patch each leftover through two flexible vertices, cover half
/// of the flexible set, then resolve the template matching and apply the
/// covering/non-covering matching of each absorber.
///
/// Returns a verified perfect matching or the stage that ran out of
/// choices. The caller may retry with a new seed or fall back to the exact
/// search.
pub fn find_pm_via_absorbers(
    s: &PartialSystem,
    params: &PipelineParams,
) -> Result<PipelineRun, PipelineFailure> {
    let n = s.n();
    if n % 3 != 0 || !s.is_complete() {
        return Err(PipelineFailure {
            stage: PipelineStage::Divisibility,
        });
    }
    let z_size = params.z_size.unwrap_or_else(|| default_z_size(n));
    if z_size == 0 {
        return degenerate_greedy(s, params);
    }
    let template =
        build_template(z_size, 0, seed_for_stream(params.seed, 1)).map_err(|_| PipelineFailure {
            stage: PipelineStage::TemplateBuild,
        })?;
    let half = z_size / 2;

    let mut last_stage = PipelineStage::StructureAssembly;
    for embed in 0..20u64 {
        let Some(structure) =
            assemble_structure(s, &template, seed_for_stream(params.seed, 100 + embed))
        else {
            last_stage = PipelineStage::StructureAssembly;
            continue;
        };
        debug_assert!(structure.validate(s));
        let structure_set = structure.vertex_set(n);
        let z_sys = structure.flexible_vertices();

        // Reserve size forced by parity: leftover ≡ |non-structure| (mod 3)
        // and 2·reserve + 3k = half for some k ≥ 0.
        let free = n - structure_set.count_ones();
        let Some(reserve) =
            (0..=half / 2).find(|r| r % 3 == free % 3 && (half - 2 * r) % 3 == 0)
        else {
            last_stage = PipelineStage::MainStep;
            continue;
        };

        match greedy_stages(
            s,
            &structure_set,
            &z_sys,
            reserve,
            half,
            params.restarts,
            seed_for_stream(params.seed, 1000 + embed),
        ) {
            Ok((stage_triples, removed_z)) => {
                // Template matching on the surviving template vertices.
                let full: u32 = (1u32 << template.vertex_count) - 1;
                let alive = template
                    .flexible
                    .iter()
                    .filter(|&&lv| removed_z.contains(&structure.vertex_map[lv]))
                    .fold(full, |m, &lv| m & !(1u32 << lv));
                let Some(matched_edges) = hypergraph_pm(alive, &template.hyperedges) else {
                    last_stage = PipelineStage::TemplateMatching;
                    continue;
                };
                let mut triples = stage_triples;
                for (i, a) in structure.absorbers.iter().enumerate() {
                    if matched_edges.contains(&i) {
                        triples.extend(a.covering_matching());
                    } else {
                        triples.extend(a.non_covering_matching());
                    }
                }
                let Some(matching) = Matching::from_triples(n, triples) else {
                    last_stage = PipelineStage::TemplateMatching;
                    continue;
                };
                if !(matching.is_perfect(n) && matching.validate(s)) {
                    last_stage = PipelineStage::TemplateMatching;
                    continue;
                }
                let stage_log = vec![
                    format!("template: z={} edges={}", z_size, template.hyperedges.len()),
                    format!("structure: {} vertices", structure_set.count_ones()),
                    format!("reserve: {}", reserve),
                    format!("embedding attempt: {}", embed),
                ];
                return Ok(PipelineRun {
                    matching,
                    stage_log,
                    used_absorbing_structure: true,
                    structure: Some(structure),
                });
            }
            Err(stage) => {
                last_stage = stage;
            }
        }
    }
    Err(PipelineFailure { stage: last_stage })
}

/// Stages 2-5: cover the non-structure vertices down to `reserve`, patch
/// each leftover through two flexible vertices, then cover flexible
/// vertices until exactly `half` of Z is used. Returns the stage triples
/// and the covered flexible vertices.
fn greedy_stages(
    s: &PartialSystem,
    structure_set: &BitSet,
    z_sys: &[Vertex],
    reserve: usize,
    half: usize,
    restarts: usize,
    seed: u64,
) -> Result<(Vec<Triple>, Vec<Vertex>), PipelineStage> {
    let n = s.n();
    // Triples {v, z, z'} available for the patch stage, per vertex.
    let mut z_pairs_of: Vec<Vec<(Vertex, Vertex)>> = vec![Vec::new(); n];
    for (i, &a) in z_sys.iter().enumerate() {
        for &b in &z_sys[i + 1..] {
            if let Some((_, t)) = s.covering(a, b) {
                if let Some(w) = t.third(a, b) {
                    if !structure_set.contains(w) {
                        z_pairs_of[w].push((a, b));
                    }
                }
            }
        }
    }
    let patchable = (0..n)
        .filter(|&v| !structure_set.contains(v) && !z_pairs_of[v].is_empty())
        .count();
    if patchable < reserve {
        return Err(PipelineStage::GreedyCover);
    }

    let mut last_stage = PipelineStage::MainStep;
    for attempt in 0..restarts {
        let mut rng = rng::stream(seed, attempt as u64);
        match greedy_attempt(s, structure_set, z_sys, &z_pairs_of, reserve, half, &mut rng) {
            Ok(result) => return Ok(result),
            Err(stage) => last_stage = stage,
        }
    }
    Err(last_stage)
}

fn greedy_attempt(
    s: &PartialSystem,
    structure_set: &BitSet,
    z_sys: &[Vertex],
    z_pairs_of: &[Vec<(Vertex, Vertex)>],
    reserve: usize,
    half: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Triple>, Vec<Vertex>), PipelineStage> {
    let n = s.n();
    let mut free = BitSet::new(n);
    for v in 0..n {
        if !structure_set.contains(v) {
            free.insert(v);
        }
    }
    let mut free_count = free.count_ones();
    let mut triples = Vec::new();

    // Stages 2 + 3: unpatchable vertices must not survive as leftovers, so
    // candidate triples sparing the patchable ones are preferred until the
    // endgame; then the main step runs down to the reserve.
    while free_count > reserve {
        let candidates: Vec<&Triple> = s
            .triples()
            .iter()
            .filter(|t| t.vertices().iter().all(|&v| free.contains(v)))
            .collect();
        if candidates.is_empty() {
            return Err(PipelineStage::MainStep);
        }
        let sparing: Vec<&&Triple> = if free_count > reserve + 3 {
            candidates
                .iter()
                .filter(|t| t.vertices().iter().all(|&v| z_pairs_of[v].is_empty()))
                .collect()
        } else {
            Vec::new()
        };
        let t = if !sparing.is_empty() {
            **sparing[rng.gen_range(0..sparing.len())]
        } else {
            *candidates[rng.gen_range(0..candidates.len())]
        };
        for v in t.vertices() {
            free.remove(v);
        }
        free_count -= 3;
        triples.push(t);
    }

    // Stage 4: each leftover through two flexible vertices.
    let leftovers: Vec<Vertex> = free.iter_ones().collect();
    debug_assert_eq!(leftovers.len(), reserve);
    let mut z_used = BitSet::new(n);
    for &v in &leftovers {
        let options: Vec<&(Vertex, Vertex)> = z_pairs_of[v]
            .iter()
            .filter(|(a, b)| !z_used.contains(*a) && !z_used.contains(*b))
            .collect();
        if options.is_empty() {
            return Err(PipelineStage::FlexiblePatch);
        }
        let &(a, b) = options[rng.gen_range(0..options.len())];
        z_used.insert(a);
        z_used.insert(b);
        triples.push(Triple::new(v, a, b));
    }

    // Stage 5: cover flexible vertices in whole triples until exactly half
    // of Z is covered.
    while z_used.count_ones() < half {
        let candidates: Vec<Triple> = s
            .triples()
            .iter()
            .filter(|t| {
                t.vertices()
                    .iter()
                    .all(|&v| z_sys.contains(&v) && !z_used.contains(v))
            })
            .copied()
            .collect();
        if candidates.is_empty() {
            return Err(PipelineStage::CoverFlexible);
        }
        let t = candidates[rng.gen_range(0..candidates.len())];
        for v in t.vertices() {
            z_used.insert(v);
        }
        triples.push(t);
    }

    Ok((triples, z_used.iter_ones().collect()))
}

/// z = 0 path: repeated seeded greedy perfect-matching attempts, with the
/// exact search as the final fallback inside the same call.
fn degenerate_greedy(
    s: &PartialSystem,
    params: &PipelineParams,
) -> Result<PipelineRun, PipelineFailure> {
    let n = s.n();
    for attempt in 0..params.restarts {
        let mut rng = rng::stream(params.seed, attempt as u64);
        let mut free = BitSet::new(n);
        for v in 0..n {
            free.insert(v);
        }
        let mut triples = Vec::new();
        loop {
            let candidates: Vec<&Triple> = s
                .triples()
                .iter()
                .filter(|t| t.vertices().iter().all(|&v| free.contains(v)))
                .collect();
            if candidates.is_empty() {
                break;
            }
            let t = *candidates[rng.gen_range(0..candidates.len())];
            for v in t.vertices() {
                free.remove(v);
            }
            triples.push(t);
        }
        if free.is_empty() {
            let matching = Matching::from_triples(n, triples).expect("greedy picks are disjoint");
            debug_assert!(matching.validate(s));
            return Ok(PipelineRun {
                matching,
                stage_log: vec![format!("greedy attempt {}", attempt)],
                used_absorbing_structure: false,
                structure: None,
            });
        }
    }
    match find_perfect_matching(s) {
        Some(matching) => Ok(PipelineRun {
            matching,
            stage_log: vec!["greedy exhausted; exact fallback".into()],
            used_absorbing_structure: false,
            structure: None,
        }),
        None => Err(PipelineFailure {
            stage: PipelineStage::MainStep,
        }),
    }
}

/// A 12-vertex host containing exactly the 7 gadget triples, and the
/// absorber labelling it: the canonical verification fixture.
pub fn canonical_gadget() -> (PartialSystem, Absorber) {
    let a = Absorber {
        root: (0, 1, 2),
        x_pair: (3, 4),
        y_pair: (5, 6),
        z_pair: (7, 8),
        hub: (9, 10, 11),
    };
    let host =
        PartialSystem::from_triples(12, a.all_edges()).expect("gadget triples conflict-free");
    (host, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::generate;
    use crate::design::sts9;

    #[test]
    fn canonical_gadget_verifies() {
        let (host, a) = canonical_gadget();
        assert!(verify_absorber(&host, &a));
        // Both gadget matchings validate as matchings of the host.
        let covering = Matching::from_triples(12, a.covering_matching()).unwrap();
        assert!(covering.is_perfect(12));
        assert!(covering.validate(&host));
        let non_covering = Matching::from_triples(12, a.non_covering_matching()).unwrap();
        assert_eq!(non_covering.covered_count(), 9);
        assert!(non_covering.validate(&host));
        for v in a.external_vertices() {
            assert!(non_covering.covers(v));
        }
        for v in [0, 1, 2] {
            assert!(!non_covering.covers(v));
        }
    }

    #[test]
    fn vertex_collisions_fail_verification() {
        let (host, a) = canonical_gadget();
        for slot in 0..12 {
            for other in 0..12 {
                if other == slot {
                    continue;
                }
                let mut vs: Vec<Vertex> = a.vertices().to_vec();
                vs[slot] = vs[other];
                let mutated = Absorber {
                    root: (vs[0], vs[1], vs[2]),
                    x_pair: (vs[3], vs[4]),
                    y_pair: (vs[5], vs[6]),
                    z_pair: (vs[7], vs[8]),
                    hub: (vs[9], vs[10], vs[11]),
                };
                assert!(
                    !verify_absorber(&host, &mutated),
                    "collision {} <- {} passed",
                    slot,
                    other
                );
            }
        }
        // A missing triple also fails.
        let mut smaller = PartialSystem::new(12);
        for t in a.all_edges().iter().skip(1) {
            smaller.add_triple(*t).unwrap();
        }
        assert!(!verify_absorber(&smaller, &a));
    }

    #[test]
    fn sts9_is_too_small_for_absorbers() {
        // 12 distinct vertices cannot fit in 9.
        let found = find_absorbers(&sts9(), 0, 1, 3, 5, 1);
        assert!(found.is_empty());
    }

    #[test]
    fn absorbers_found_in_generated_sts() {
        let s = generate(21, 4, 0.3).unwrap();
        let mut total = 0;
        for seed in 0..10u64 {
            for (x, y, z) in [(0, 1, 2), (3, 7, 11), (4, 9, 17)] {
                let found = find_absorbers(&s, x, y, z, 3, seed);
                for a in &found {
                    assert!(verify_absorber(&s, a));
                }
                // External disjointness within one call.
                let mut seen = std::collections::BTreeSet::new();
                for a in &found {
                    for v in a.external_vertices() {
                        assert!(seen.insert(v));
                    }
                }
                total += found.len();
            }
        }
        assert!(total > 0, "no absorbers found at order 21 at all");
    }

    #[test]
    fn limit_zero_returns_nothing() {
        let s = generate(21, 4, 0.3).unwrap();
        assert!(find_absorbers(&s, 0, 1, 2, 0, 7).is_empty());
    }

    #[test]
    fn template_z2_minimal() {
        let t = build_template(2, 0, 1).unwrap();
        assert!(t.certified);
        assert_eq!(t.checks, 2);
        assert_eq!(t.flexible.len(), 2);
        assert_eq!(t.vertex_count, 4); // base 2 + flexible 2
    }

    #[test]
    fn template_z8_certifies_all_70_removals() {
        let t = build_template(8, 2, 3).unwrap();
        assert!(t.certified);
        assert_eq!(t.checks, 70);
        // Independent re-verification of the certificate.
        let full: u32 = (1 << t.vertex_count) - 1;
        for removal in half_subsets(&t.flexible) {
            let alive = removal.iter().fold(full, |m, &v| m & !(1u32 << v));
            assert!(hypergraph_pm(alive, &t.hyperedges).is_some());
        }
    }

    #[test]
    fn template_rejects_odd_and_oversized() {
        assert!(matches!(
            build_template(5, 1, 0),
            Err(AbsorbingError::BadFlexibleSize { z_size: 5 })
        ));
        assert!(build_template(18, 1, 0).is_err());
    }

    #[test]
    fn conditions_report_shapes() {
        let s = sts9();
        // Z = ∅: every vertex has degree 0 into Z; with a positive threshold
        // they are all reported low (not an error).
        let rep = check_conditions(&s, &[], 0.3, 0.5, &[9], 2, 1);
        assert_eq!(rep.cond2_low_degree, 9);
        assert!(!rep.cond2_pass);
        // W = all vertices of a complete STS: induced = N = 12 versus
        // (1-β) |W|³/(6n) = 0.5 · 13.5; margin reported either way.
        let row = &rep.cond3_rows[0];
        assert_eq!(row.induced, 12);
        assert!((row.required - 0.5 * 13.5).abs() < 1e-12);
        assert!(row.margin > 0.0);
        // W below the 3δ⁵n threshold is skipped (δ = 0.9 puts it at 15.9).
        let rep = check_conditions(&s, &[0, 1], 0.9, 0.5, &[9], 2, 1);
        assert!(rep.cond3_rows.is_empty());
    }

    #[test]
    fn pipeline_divisibility_failure() {
        let s = generate(13, 1, 0.3).unwrap();
        let err = find_pm_via_absorbers(&s, &PipelineParams::new(1)).unwrap_err();
        assert_eq!(err.stage, PipelineStage::Divisibility);
    }

    #[test]
    fn pipeline_degenerate_on_sts9_matches_exact_census() {
        // z = 0 (default for n < 90): greedy + exact fallback must return
        // one of the 4 parallel classes.
        let s = sts9();
        let run = find_pm_via_absorbers(&s, &PipelineParams::new(5)).unwrap();
        assert!(!run.used_absorbing_structure);
        assert!(run.matching.is_perfect(9));
        assert!(run.matching.validate(&s));
        let count = crate::matching::count_perfect_matchings(&s).unwrap();
        assert_eq!(count, num_bigint::BigUint::from(4u32));
    }

    #[test]
    fn pipeline_full_run_at_99() {
        let s = generate(99, 8, 0.4).unwrap();
        let run = find_pm_via_absorbers(&s, &PipelineParams::new(3)).unwrap();
        assert!(run.used_absorbing_structure);
        assert!(run.matching.is_perfect(99));
        assert!(run.matching.validate(&s));
        let st = run.structure.unwrap();
        assert!(st.validate(&s));
        // Disjointness cardinality: 9 externals per template hyperedge.
        assert_eq!(
            st.vertex_set(99).count_ones(),
            st.template.vertex_count + 9 * st.template.hyperedges.len()
        );
    }
}

//! Exact matching search and counting in 3-uniform partial systems.
//!
//! The searches branch on the least-index uncovered vertex and iterate its
//! incident triples whose other two vertices are still free; that kills
//! symmetric re-orderings of the same matching and needs no external solver.

use crate::bitset::BitSet;
use crate::design::{PartialSystem, Triple, Vertex};
use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("exact matching search infeasible for n={n}")]
    TooLarge { n: usize },
}

/// A set of pairwise vertex-disjoint triples of a host system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    triples: Vec<Triple>,
    covered: BitSet,
}

impl Matching {
    pub fn new(n: usize) -> Matching {
        Matching {
            triples: Vec::new(),
            covered: BitSet::new(n),
        }
    }

    pub fn from_triples(n: usize, triples: impl IntoIterator<Item = Triple>) -> Option<Matching> {
        let mut m = Matching::new(n);
        for t in triples {
            if !m.push(t) {
                return None;
            }
        }
        Some(m)
    }

    /// Adds `t` if it is disjoint from the triples so far.
    pub fn push(&mut self, t: Triple) -> bool {
        if t.vertices().iter().any(|&v| self.covered.contains(v)) {
            return false;
        }
        for v in t.vertices() {
            self.covered.insert(v);
        }
        self.triples.push(t);
        true
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn covers(&self, v: Vertex) -> bool {
        self.covered.contains(v)
    }

    pub fn covered_count(&self) -> usize {
        self.covered.count_ones()
    }

    pub fn is_perfect(&self, n: usize) -> bool {
        self.covered.capacity() == n && self.covered_count() == n
    }

    /// Full validation against a host system: every triple belongs to `host`,
    /// triples are pairwise disjoint, and the covered set is their union.
    pub fn validate(&self, host: &PartialSystem) -> bool {
        let mut seen = BitSet::new(host.n());
        for t in &self.triples {
            if !host.has_triple(t) {
                return false;
            }
            for v in t.vertices() {
                if seen.contains(v) {
                    return false;
                }
                seen.insert(v);
            }
        }
        seen == self.covered
    }
}

/// One matching per line, `a b c`.
pub fn encode_matching(m: &Matching) -> String {
    let mut out = String::new();
    for t in m.triples() {
        let [a, b, c] = t.vertices();
        out.push_str(&format!("{} {} {}\n", a, b, c));
    }
    out
}

const EXACT_GUARD: usize = 27;

struct MatchSearch<'a> {
    host: &'a PartialSystem,
    /// incident[v] = indices of host triples containing v.
    incident: Vec<Vec<u32>>,
    /// Vertex processing order (identity unless randomized).
    order: Vec<Vertex>,
    covered: BitSet,
    chosen: Vec<Triple>,
}

impl<'a> MatchSearch<'a> {
    fn new(host: &'a PartialSystem, order: Vec<Vertex>) -> MatchSearch<'a> {
        let n = host.n();
        let mut incident = vec![Vec::new(); n];
        for (i, t) in host.triples().iter().enumerate() {
            for v in t.vertices() {
                incident[v].push(i as u32);
            }
        }
        MatchSearch {
            host,
            incident,
            order,
            covered: BitSet::new(n),
            chosen: Vec::new(),
        }
    }

    fn first_free(&self, from: usize) -> Option<usize> {
        (from..self.order.len()).find(|&i| !self.covered.contains(self.order[i]))
    }

    /// Enumerates perfect matchings; `visit` returns false to stop.
    fn perfect(&mut self, from: usize, visit: &mut dyn FnMut(&[Triple]) -> bool) -> bool {
        let Some(pos) = self.first_free(from) else {
            return visit(&self.chosen);
        };
        let v = self.order[pos];
        for i in self.incident[v].clone() {
            let t = self.host.triples()[i as usize];
            if t.vertices().iter().any(|&w| self.covered.contains(w)) {
                continue;
            }
            for w in t.vertices() {
                self.covered.insert(w);
            }
            self.chosen.push(t);
            let keep_going = self.perfect(pos + 1, visit);
            self.chosen.pop();
            for w in t.vertices() {
                self.covered.remove(w);
            }
            if !keep_going {
                return false;
            }
        }
        true
    }

    /// Branch-and-bound maximum matching.
    fn maximum(&mut self, from: usize, free: usize, best: &mut Vec<Triple>) {
        // Upper bound: everything free could still be matched in triples.
        if self.chosen.len() + free / 3 <= best.len() {
            return;
        }
        let Some(pos) = self.first_free(from) else {
            if self.chosen.len() > best.len() {
                *best = self.chosen.clone();
            }
            return;
        };
        let v = self.order[pos];
        for i in self.incident[v].clone() {
            let t = self.host.triples()[i as usize];
            if t.vertices().iter().any(|&w| self.covered.contains(w)) {
                continue;
            }
            for w in t.vertices() {
                self.covered.insert(w);
            }
            self.chosen.push(t);
            self.maximum(pos + 1, free - 3, best);
            self.chosen.pop();
            for w in t.vertices() {
                self.covered.remove(w);
            }
        }
        // Or leave v uncovered.
        self.covered.insert(v);
        self.maximum(pos + 1, free - 1, best);
        self.covered.remove(v);
        if self.chosen.len() > best.len() {
            *best = self.chosen.clone();
        }
    }
}

/// A perfect matching of `s`, if one exists. `None` when `3 ∤ n`, when some
/// vertex lies in no triple, or when the search exhausts.
pub fn find_perfect_matching(s: &PartialSystem) -> Option<Matching> {
    let n = s.n();
    if n % 3 != 0 {
        return None;
    }
    let mut search = MatchSearch::new(s, (0..n).collect());
    let mut found: Option<Matching> = None;
    search.perfect(0, &mut |triples| {
        found = Matching::from_triples(n, triples.iter().copied());
        false // stop at the first
    });
    found
}

/// Exact number of perfect matchings (0 when `3 ∤ n`). Guarded at `n <= 27`.
pub fn count_perfect_matchings(s: &PartialSystem) -> Result<BigUint, MatchingError> {
    count_perfect_matchings_with_order(s, None)
}

/// As [`count_perfect_matchings`] with an explicit vertex processing order
/// (used to cross-check order invariance).
pub fn count_perfect_matchings_with_order(
    s: &PartialSystem,
    order: Option<Vec<Vertex>>,
) -> Result<BigUint, MatchingError> {
    let n = s.n();
    if n > EXACT_GUARD {
        return Err(MatchingError::TooLarge { n });
    }
    if n % 3 != 0 {
        return Ok(BigUint::from(0u32));
    }
    let order = order.unwrap_or_else(|| (0..n).collect());
    assert_eq!(order.len(), n, "order must list every vertex");
    let mut search = MatchSearch::new(s, order);
    let mut count = BigUint::from(0u32);
    search.perfect(0, &mut |_| {
        count += 1u32;
        true
    });
    Ok(count)
}

#[derive(Clone, Debug)]
pub struct MaxMatching {
    pub matching: Matching,
    /// True when found by exhaustive branch-and-bound; false for the
    /// greedy/local-search lower bound used beyond the exact guard.
    pub exact: bool,
}

/// A maximum-cardinality matching: exact branch-and-bound for `n <= 27`,
/// greedy plus (1,2)-swap local search (flagged as a lower bound) beyond.
pub fn max_matching(s: &PartialSystem) -> MaxMatching {
    let n = s.n();
    if n <= EXACT_GUARD {
        let mut search = MatchSearch::new(s, (0..n).collect());
        let mut best = Vec::new();
        search.maximum(0, n, &mut best);
        MaxMatching {
            matching: Matching::from_triples(n, best).expect("search output is disjoint"),
            exact: true,
        }
    } else {
        MaxMatching {
            matching: greedy_local_matching(s),
            exact: false,
        }
    }
}

fn greedy_local_matching(s: &PartialSystem) -> Matching {
    let n = s.n();
    let mut m = Matching::new(n);
    for t in s.triples() {
        m.push(*t);
    }
    // (1,2)-swap passes: drop one triple if two disjoint triples fit in the
    // vacated plus free vertices.
    loop {
        let mut improved = false;
        'outer: for i in 0..m.triples.len() {
            let removed = m.triples[i];
            let mut covered = m.covered.clone();
            for v in removed.vertices() {
                covered.remove(v);
            }
            let free: Vec<Triple> = s
                .triples()
                .iter()
                .copied()
                .filter(|t| t.vertices().iter().all(|&v| !covered.contains(v)))
                .collect();
            for (a, ta) in free.iter().enumerate() {
                for tb in &free[a + 1..] {
                    if ta.overlap(tb) == 0 {
                        m.triples.swap_remove(i);
                        m.covered = covered;
                        m.push(*ta);
                        m.push(*tb);
                        improved = true;
                        break 'outer;
                    }
                }
            }
        }
        if !improved {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::generate;
    use crate::design::{fano, sts9};
    use rand::seq::SliceRandom;

    /// Brute-force PM count over all subsets of lines (oracle).
    fn oracle_pm_count(s: &PartialSystem) -> u64 {
        let n = s.n();
        if n % 3 != 0 {
            return 0;
        }
        let k = n / 3;
        let triples = s.triples();
        let mut count = 0u64;
        let mut stack: Vec<usize> = Vec::new();
        fn rec(
            triples: &[Triple],
            start: usize,
            stack: &mut Vec<usize>,
            k: usize,
            count: &mut u64,
        ) {
            if stack.len() == k {
                *count += 1;
                return;
            }
            for i in start..triples.len() {
                if stack.iter().all(|&j| triples[j].overlap(&triples[i]) == 0) {
                    stack.push(i);
                    rec(triples, i + 1, stack, k, count);
                    stack.pop();
                }
            }
        }
        rec(triples, 0, &mut stack, k, &mut count);
        count
    }

    #[test]
    fn sts9_has_four_parallel_classes() {
        assert_eq!(
            count_perfect_matchings(&sts9()).unwrap(),
            BigUint::from(4u32)
        );
        assert_eq!(oracle_pm_count(&sts9()), 4);
        let m = find_perfect_matching(&sts9()).unwrap();
        assert!(m.is_perfect(9));
        assert!(m.validate(&sts9()));
    }

    #[test]
    fn fano_has_no_perfect_matching() {
        assert!(find_perfect_matching(&fano()).is_none());
        assert_eq!(
            count_perfect_matchings(&fano()).unwrap(),
            BigUint::from(0u32)
        );
    }

    #[test]
    fn fano_max_matching_is_one() {
        // Any two Fano lines intersect: brute force over line pairs.
        let f = fano();
        for (i, a) in f.triples().iter().enumerate() {
            for b in &f.triples()[i + 1..] {
                assert!(a.overlap(b) > 0);
            }
        }
        let mm = max_matching(&f);
        assert!(mm.exact);
        assert_eq!(mm.matching.len(), 1);
        assert!(mm.matching.validate(&f));
    }

    #[test]
    fn empty_system_max_matching_is_zero() {
        let mm = max_matching(&PartialSystem::new(9));
        assert!(mm.exact);
        assert_eq!(mm.matching.len(), 0);
    }

    #[test]
    fn sts9_max_matching_is_perfect() {
        let mm = max_matching(&sts9());
        assert_eq!(mm.matching.len(), 3);
        assert!(mm.matching.is_perfect(9));
    }

    #[test]
    fn isolated_vertex_blocks_perfect_matching() {
        // Vertex 8 in no triple: perfect matching impossible.
        let s = PartialSystem::from_triples(9, [Triple::new(0, 1, 2), Triple::new(3, 4, 5)])
            .unwrap();
        assert!(find_perfect_matching(&s).is_none());
    }

    #[test]
    fn count_invariant_under_relabeling_and_order() {
        let s = generate(15, 42, 0.4).unwrap();
        let base = count_perfect_matchings(&s).unwrap();
        assert_eq!(BigUint::from(oracle_pm_count(&s)), base);
        let mut rng = crate::rng::root(9);
        for _ in 0..3 {
            let mut order: Vec<usize> = (0..15).collect();
            order.shuffle(&mut rng);
            assert_eq!(
                count_perfect_matchings_with_order(&s, Some(order.clone())).unwrap(),
                base
            );
            // Relabel the system by the same permutation and recount.
            let relabeled = PartialSystem::from_triples(
                15,
                s.triples()
                    .iter()
                    .map(|t| Triple::new(order[t.vertices()[0]], order[t.vertices()[1]], order[t.vertices()[2]])),
            )
            .unwrap();
            assert_eq!(count_perfect_matchings(&relabeled).unwrap(), base);
        }
    }

    #[test]
    fn guard_beyond_27() {
        let s = PartialSystem::new(33);
        assert!(matches!(
            count_perfect_matchings(&s),
            Err(MatchingError::TooLarge { n: 33 })
        ));
        // max_matching falls back to greedy with the lower-bound flag.
        let s = generate(33, 3, 0.4).unwrap();
        let mm = max_matching(&s);
        assert!(!mm.exact);
        assert!(mm.matching.validate(&s));
        assert!(mm.matching.len() >= 9); // greedy on an STS(33) gets close to 11
    }

    #[test]
    fn matching_file_lines() {
        let m = find_perfect_matching(&sts9()).unwrap();
        let text = encode_matching(&m);
        assert_eq!(text.lines().count(), 3);
    }
}

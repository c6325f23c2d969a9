//! Concentration-bound evaluators and Monte-Carlo tail checks.
//!
//! The two bounds are theorems, so the empirical checks double as
//! correctness oracles: a tail frequency exceeding a bound beyond
//! Monte-Carlo noise indicates an implementation bug somewhere in the
//! sampling machinery.

use crate::design::{pairs_total, PartialSystem, Triple};
use crate::quasirandom::{check_quasirandom, CheckMode};
use crate::removal::seed_for_stream;
use crate::rng;
use rand::Rng;
use serde::Serialize;

/// `exp(-t² / (4K²np + 2Kt))`: the Bernstein-type bounded-difference bound
/// for p-biased product spaces with Lipschitz constant `K`.
pub fn bernstein_bound(k: f64, n: usize, p: f64, t: f64) -> f64 {
    assert!(k > 0.0 && p >= 0.0 && p <= 1.0 && t >= 0.0);
    if t == 0.0 {
        return 1.0;
    }
    let denom = 4.0 * k * k * n as f64 * p + 2.0 * k * t;
    if denom == 0.0 {
        return 0.0; // p = 0: f is constant, any t > 0 has probability 0
    }
    (-t * t / denom).exp()
}

/// `exp(-t² / (2(v + Kt)))`: Freedman's inequality for supermartingales with
/// increments bounded by `K` and predictable quadratic variation at most `v`.
pub fn freedman_bound(k: f64, v: f64, t: f64) -> f64 {
    assert!(k > 0.0 && v >= 0.0 && t >= 0.0);
    if t == 0.0 {
        return 1.0;
    }
    (-t * t / (2.0 * (v + k * t))).exp()
}

// ---------------------------------------------------------------------------
// Bernstein tail experiments
// ---------------------------------------------------------------------------

/// Built-in test functions on the p-biased cube. Coordinates are either
/// plain bits or the hyperedge indicators of a binomial 3-uniform hypergraph
/// on `n` vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BernsteinF {
    /// Sum of `n` independent bits; `K = 1`, coordinates = `n`.
    CoordinateSum,
    /// Number of present hyperedges; `K = 1`, coordinates = `C(n,3)`.
    EdgeCount,
    /// Number of present hyperedges inside the window `[0, w)` that share a
    /// pair with no other present hyperedge. Toggling one hyperedge changes
    /// this by at most 3 (it can isolate or de-isolate one hyperedge per
    /// pair), so `K = 3`.
    IsolatedTriplesInWindow { window: usize },
}

impl BernsteinF {
    pub fn lipschitz(&self) -> f64 {
        match self {
            BernsteinF::CoordinateSum | BernsteinF::EdgeCount => 1.0,
            BernsteinF::IsolatedTriplesInWindow { .. } => 3.0,
        }
    }

    /// Number of independent coordinates for vertex parameter `n`.
    pub fn coordinates(&self, n: usize) -> usize {
        match self {
            BernsteinF::CoordinateSum => n,
            BernsteinF::EdgeCount | BernsteinF::IsolatedTriplesInWindow { .. } => {
                pairs_total(n) * n.saturating_sub(2) / 3
            }
        }
    }

    fn evaluate(&self, n: usize, p: f64, rng: &mut impl Rng) -> f64 {
        match *self {
            BernsteinF::CoordinateSum => {
                let mut sum = 0u64;
                for _ in 0..n {
                    if rng.gen_bool(p) {
                        sum += 1;
                    }
                }
                sum as f64
            }
            BernsteinF::EdgeCount => {
                let sample = sample_hypergraph(n, p, rng);
                sample.len() as f64
            }
            BernsteinF::IsolatedTriplesInWindow { window } => {
                let sample = sample_hypergraph(n, p, rng);
                let mut usage = vec![0u8; pairs_total(n)];
                for t in &sample {
                    for (u, v) in t.pairs() {
                        let id = crate::design::pair_id(u, v);
                        usage[id] = usage[id].saturating_add(1);
                    }
                }
                sample
                    .iter()
                    .filter(|t| {
                        t.vertices().iter().all(|&v| v < window)
                            && t.pairs()
                                .iter()
                                .all(|&(u, v)| usage[crate::design::pair_id(u, v)] == 1)
                    })
                    .count() as f64
            }
        }
    }
}

/// Binomial 3-uniform hypergraph on `[n]` with hyperedge probability `p`,
/// sampled by geometric gap-skipping over the colex ranking.
fn sample_hypergraph(n: usize, p: f64, rng: &mut impl Rng) -> Vec<Triple> {
    let total = pairs_total(n) * n.saturating_sub(2) / 3;
    let mut out = Vec::new();
    if p <= 0.0 {
        return out;
    }
    let mut idx = 0usize;
    while idx < total {
        if p < 1.0 {
            let u: f64 = rng.gen_range(0.0..1.0);
            let gap = (1.0 - u).ln() / (1.0 - p).ln();
            idx += gap as usize;
            if idx >= total {
                break;
            }
        }
        out.push(triple_from_colex(idx, n));
        idx += 1;
    }
    out
}

fn triple_from_colex(rank: usize, n: usize) -> Triple {
    let mut c = 2usize;
    while c + 1 < n && (c + 1) * c * (c - 1) / 6 <= rank {
        c += 1;
    }
    let mut rem = rank - c * (c - 1) * (c - 2) / 6;
    let mut b = 1usize;
    while b + 1 < c && (b + 1) * b / 2 <= rem {
        b += 1;
    }
    rem -= b * (b - 1) / 2;
    Triple::new(rem, b, c)
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    /// `empirical > bound + 3σ` where σ is the Monte-Carlo standard error of
    /// the bound-sized tail.
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BernsteinTailReport {
    pub f: BernsteinF,
    pub n: usize,
    pub p: f64,
    pub samples: usize,
    pub lipschitz: f64,
    pub coordinates: usize,
    pub empirical_mean: f64,
    pub rows: Vec<TailRow>,
    pub any_violation: bool,
}

/// Samples `f` and compares the two-sided empirical tail
/// `P(|f - mean| > t)` against twice the one-sided Bernstein bound at each
/// grid point. The mean is the sample mean.
pub fn bernstein_tail_experiment(
    f: BernsteinF,
    n: usize,
    p: f64,
    samples: usize,
    t_grid: &[f64],
    seed: u64,
) -> BernsteinTailReport {
    let mut rng = rng::root(seed);
    let values: Vec<f64> = (0..samples).map(|_| f.evaluate(n, p, &mut rng)).collect();
    let mean = values.iter().sum::<f64>() / samples.max(1) as f64;
    let coords = f.coordinates(n);
    let k = f.lipschitz();
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut any_violation = false;
    for &t in t_grid {
        let exceed = values.iter().filter(|&&v| (v - mean).abs() > t).count();
        let empirical = exceed as f64 / samples.max(1) as f64;
        // Two-sided empirical tail versus the (one-sided) bound doubled.
        let bound = (2.0 * bernstein_bound(k, coords, p, t)).min(1.0);
        let sigma = (bound * (1.0 - bound) / samples.max(1) as f64).sqrt();
        let violated = empirical > bound + 3.0 * sigma;
        any_violation |= violated;
        rows.push(TailRow {
            t,
            empirical,
            bound,
            violated,
        });
    }
    BernsteinTailReport {
        f,
        n,
        p,
        samples,
        lipschitz: k,
        coordinates: coords,
        empirical_mean: mean,
        rows,
        any_violation,
    }
}

// ---------------------------------------------------------------------------
// Freedman check on tracked removal-process statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct FreedmanReport {
    pub runs: usize,
    pub steps: usize,
    /// Largest absolute one-step increment observed (pooled).
    pub k_hat: f64,
    /// Pooled mean of squared increments, summed over steps: the `v`
    /// estimate.
    pub v_hat: f64,
    pub rows: Vec<TailRow>,
    pub any_violation: bool,
}

/// Given replicated tracks `X_r(0..=T)` of (approximately) supermartingale
/// statistics, estimates `K` and `V` empirically and compares the excursion
/// frequencies `P(max_i X(i) - X(0) >= t)` to the Freedman curve.
pub fn freedman_check(tracks: &[Vec<f64>], t_grid: &[f64]) -> FreedmanReport {
    assert!(!tracks.is_empty());
    let steps = tracks.iter().map(|t| t.len()).min().unwrap_or(0);
    let runs = tracks.len();
    let mut k_hat = 0.0f64;
    let mut v_hat = 0.0f64;
    for i in 1..steps {
        let mut sq = 0.0;
        for tr in tracks {
            let dx = tr[i] - tr[i - 1];
            k_hat = k_hat.max(dx.abs());
            sq += dx * dx;
        }
        v_hat += sq / runs as f64;
    }
    let excursions: Vec<f64> = tracks
        .iter()
        .map(|tr| {
            tr[..steps]
                .iter()
                .map(|x| x - tr[0])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut any_violation = false;
    for &t in t_grid {
        let exceed = excursions.iter().filter(|&&e| e >= t).count();
        let empirical = exceed as f64 / runs as f64;
        let bound = freedman_bound(k_hat.max(1e-12), v_hat, t).min(1.0);
        let sigma = (bound * (1.0 - bound) / runs as f64).sqrt();
        let violated = empirical > bound + 3.0 * sigma;
        any_violation |= violated;
        rows.push(TailRow {
            t,
            empirical,
            bound,
            violated,
        });
    }
    FreedmanReport {
        runs,
        steps,
        k_hat,
        v_hat,
        rows,
        any_violation,
    }
}

/// Tracks, for `runs` removal-process replicas on the empty order-`n`
/// system, the deviation of vertex 0's leave-degree from its predicted
/// curve: `X(i) = deg_0(i) - (1 - i/N) n`. Both signs are returned as
/// separate track families (the supermartingale pair).
pub fn trp_degree_tracks(
    n: usize,
    steps: usize,
    runs: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use crate::removal::TriangleTracker;
    let cap = pairs_total(n) as f64 / 3.0;
    let mut plus = Vec::with_capacity(runs);
    let mut minus = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut rng = rng::root(seed_for_stream(seed, r as u64));
        let mut tracker = TriangleTracker::new(crate::design::LeaveGraph::complete(n));
        let mut track = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let pred = (1.0 - i as f64 / cap) * n as f64;
            track.push(tracker.graph().degree(0) as f64 - pred);
            if i == steps {
                break;
            }
            match tracker.sample(&mut rng) {
                Some(t) => tracker.remove_triple(t),
                None => break,
            }
        }
        let neg: Vec<f64> = track.iter().map(|x| -x).collect();
        plus.push(track);
        minus.push(neg);
    }
    (plus, minus)
}

// ---------------------------------------------------------------------------
// Random-order typicality
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct TypicalityReport {
    pub trials: usize,
    pub passes: usize,
    pub pass_rate: f64,
    pub alpha: f64,
    pub eps: f64,
    pub h: usize,
    pub stride: usize,
}

/// Fraction of uniformly random orderings of the triples of a complete
/// system whose every checked prefix `i <= alpha N` is `(eps, h)`-
/// quasirandom. Prefixes are checked every `stride` steps (and at `alpha N`
/// itself).
pub fn random_order_typicality(
    s: &PartialSystem,
    alpha: f64,
    eps: f64,
    h: usize,
    trials: usize,
    stride: usize,
    seed: u64,
) -> TypicalityReport {
    assert!(s.is_complete(), "typicality needs a complete system");
    assert!(stride >= 1);
    let cap = s.m();
    let limit = (alpha * cap as f64).floor() as usize;
    let mut passes = 0usize;
    for trial in 0..trials {
        let mut rng = rng::stream(seed, trial as u64);
        let mut order: Vec<Triple> = s.triples().to_vec();
        // Fisher-Yates.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        // The prefix leave graph: start complete, peel off prefix triples,
        // checking at strides.
        let mut graph = crate::design::LeaveGraph::complete(s.n());
        let mut ok = true;
        let mut check_rng = rng::stream(seed, (trials + trial) as u64);
        for i in 1..=limit {
            let t = order[i - 1];
            for (u, v) in t.pairs() {
                graph.remove_edge(u, v);
            }
            if i % stride == 0 || i == limit {
                match check_quasirandom(&graph, eps, h, CheckMode::Exhaustive, &mut check_rng) {
                    Ok(rep) if rep.passed => {}
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            passes += 1;
        }
    }
    TypicalityReport {
        trials,
        passes,
        pass_rate: passes as f64 / trials.max(1) as f64,
        alpha,
        eps,
        h,
        stride,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::sts9;

    #[test]
    fn bernstein_values() {
        assert_eq!(bernstein_bound(1.0, 100, 0.1, 0.0), 1.0);
        // exp(-400/(40+40)) = exp(-5)
        let b = bernstein_bound(1.0, 100, 0.1, 20.0);
        assert!((b - (-5.0f64).exp()).abs() < 1e-12);
        assert!((b - 0.0067379).abs() < 1e-7);
    }

    #[test]
    fn bounds_monotone_decreasing_and_at_most_one() {
        let mut prev_b = f64::INFINITY;
        let mut prev_f = f64::INFINITY;
        for i in 0..50 {
            let t = i as f64 * 0.5;
            let b = bernstein_bound(2.0, 1000, 0.3, t);
            let f = freedman_bound(1.0, 5.0, t);
            assert!(b <= 1.0 && f <= 1.0);
            assert!(b <= prev_b + 1e-15);
            assert!(f <= prev_f + 1e-15);
            prev_b = b;
            prev_f = f;
        }
    }

    #[test]
    fn freedman_values() {
        assert_eq!(freedman_bound(1.0, 0.0, 0.0), 1.0);
        assert!((freedman_bound(1.0, 0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn p_zero_constant_function() {
        let rep = bernstein_tail_experiment(
            BernsteinF::CoordinateSum,
            50,
            0.0,
            200,
            &[0.5, 1.0, 2.0],
            1,
        );
        for row in &rep.rows {
            assert_eq!(row.empirical, 0.0);
            assert!(!row.violated);
        }
    }

    #[test]
    fn coordinate_sum_no_violations_small() {
        let grid: Vec<f64> = (1..=8).map(|i| i as f64 * 2.0).collect();
        let rep =
            bernstein_tail_experiment(BernsteinF::CoordinateSum, 200, 0.5, 2000, &grid, 3);
        assert!(!rep.any_violation);
        assert!((rep.empirical_mean - 100.0).abs() < 5.0);
    }

    #[test]
    fn isolated_triples_no_violations_small() {
        let grid: Vec<f64> = (1..=6).map(|i| i as f64 * 3.0).collect();
        let rep = bernstein_tail_experiment(
            BernsteinF::IsolatedTriplesInWindow { window: 10 },
            20,
            0.01,
            500,
            &grid,
            4,
        );
        assert!(!rep.any_violation);
    }

    #[test]
    fn freedman_zero_increments() {
        let tracks = vec![vec![0.0; 10]; 5];
        let rep = freedman_check(&tracks, &[0.0, 1.0]);
        assert_eq!(rep.rows[0].empirical, 1.0); // excursion 0 >= 0
        assert!(rep.rows[0].bound >= 1.0 - 1e-12);
        assert_eq!(rep.rows[1].empirical, 0.0);
        assert!(!rep.any_violation);
    }

    #[test]
    fn typicality_trivial_cases() {
        let s = sts9();
        // alpha = 0: empty prefix always passes.
        let rep = random_order_typicality(&s, 0.0, 0.1, 2, 10, 1, 5);
        assert_eq!(rep.pass_rate, 1.0);
        // A wide band is vacuous: the lower side needs eps >= 1 and the
        // upper side eps >= n/(d^h n) - 1 <= 3 for these prefixes.
        let rep = random_order_typicality(&s, 0.5, 3.0, 2, 10, 1, 5);
        assert_eq!(rep.pass_rate, 1.0);
    }

    #[test]
    fn typicality_monotone_in_eps() {
        let s = sts9();
        let mut prev = -1.0;
        for eps in [0.05, 0.3, 0.6, 1.0] {
            let rep = random_order_typicality(&s, 0.3, eps, 2, 40, 1, 11);
            assert!(rep.pass_rate >= prev);
            prev = rep.pass_rate;
        }
    }
}

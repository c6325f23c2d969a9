use steiner_forge::design::PartialSystem;
use steiner_forge::removal::{trajectory, TrpResult};

fn main() {
    let n = 99usize;
    let cap = (n * (n - 1) / 2) / 3; // 1617
    let steps = (0.8 * cap as f64) as usize;
    // Deviation profile of one run
    let tr = trajectory(&PartialSystem::new(n), steps, 1, 1, 0);
    for frac in [0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8] {
        let i = (frac * cap as f64) as usize;
        let r = &tr.records[i.min(tr.records.len()-1)];
        println!("i/N={:.2} pred={:6.2} deg=[{},{}] mean={:.2} max_dev={:.4}",
            frac, r.pred_p1n, r.deg_min, r.deg_max, r.deg_mean, r.max_dev);
    }
    // Per-run summary of max over steps of mean-degree deviation vs worst-vertex deviation
    let mut worst_overall = Vec::new();
    let mut frozen = 0;
    for seed in 0..100u64 {
        let tr = trajectory(&PartialSystem::new(n), steps, seed, 1, 0);
        if matches!(tr.outcome.result, TrpResult::Frozen { .. }) { frozen += 1; continue; }
        // max over steps of worst-vertex relative deviation
        let wv = tr.records.iter().map(|r| {
            let pred = r.pred_p1n;
            let a = (r.deg_min as f64/pred - 1.0).abs();
            let b = (r.deg_max as f64/pred - 1.0).abs();
            a.max(b)
        }).fold(0.0f64, f64::max);
        worst_overall.push(wv);
    }
    worst_overall.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("frozen={} worst-vertex dev: median={:.3} p95={:.3}", frozen,
        worst_overall[50], worst_overall[95]);
}

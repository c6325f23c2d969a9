use steiner_forge::absorbing::{find_pm_via_absorbers, PipelineParams};
use steiner_forge::completion::generate;
use steiner_forge::matching::find_perfect_matching;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut absorber_ok = 0;
    let mut total_ok = 0;
    let mut stages = std::collections::BTreeMap::new();
    for seed in 0..50u64 {
        let s = generate(99, 1000 + seed, 0.4).unwrap();
        match find_pm_via_absorbers(&s, &PipelineParams::new(seed)) {
            Ok(run) => {
                assert!(run.matching.is_perfect(99) && run.matching.validate(&s));
                if run.used_absorbing_structure { absorber_ok += 1; }
                total_ok += 1;
            }
            Err(f) => {
                *stages.entry(format!("{:?}", f.stage)).or_insert(0) += 1;
                if find_perfect_matching(&s).is_some() { total_ok += 1; }
            }
        }
    }
    println!("elapsed {:?}", t0.elapsed());
    println!("absorber-path: {}/50, combined with fallback: {}/50", absorber_ok, total_ok);
    println!("failure stages: {:?}", stages);
}

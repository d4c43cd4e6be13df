//! Pair-sampling and label-smoothing ablations on SparseButton with a noisy
//! teacher.
//!
//! cargo run --release --example ablation -- [sampling|smoothing] [seeds] [noise_var]

use scorerl::envs::EnvKind;
use scorerl::trainer::{run_ablation, Arm, RunConfig};

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let arms = match args.get(1).map(String::as_str).unwrap_or("sampling") {
        "smoothing" => vec![Arm::Adaptive, Arm::Constant, Arm::Hard],
        _ => vec![Arm::Priority, Arm::Uniform, Arm::Entropy],
    };
    let n: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut cfg = RunConfig::desk(EnvKind::SparseButton);
    cfg.teacher.noise_variance = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let seeds: Vec<u64> = (0..n).collect();
    for r in run_ablation(&cfg, &arms, &seeds).expect("ablation failed") {
        println!("{:9} mean {:.3} ± {:.3}  per seed {:?}", r.arm.name(), r.mean, r.std, r.final_performance);
    }
}

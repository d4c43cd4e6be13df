//! Train on scores, then check how well the learned reward ranks unseen
//! trajectories from every stage of training and how closely its per-step
//! output tracks the true reward.
//!
//! cargo run --release --example reward_extrapolation -- [seed] [out_dir]

use std::path::PathBuf;

use scorerl::envs::EnvKind;
use scorerl::metrics::analyze_run;
use scorerl::trainer::{run_to_dir, RunConfig};

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::desk(EnvKind::PointGoal);
    cfg.seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("scorerl_extrapolation"));
    let art = run_to_dir(cfg, &out).expect("run failed");
    println!("trained with {} scores, final performance {:.3}", art.report.scores_used, art.report.final_performance);
    let s = analyze_run(&out).expect("analysis failed");
    println!(
        "{} held-out trajectories: kendall tau_b {:.3}, pearson {:.3}",
        s.trajectories, s.correlation.kendall_tau_b, s.correlation.pearson_r
    );
    println!(
        "per-step aligned MAE {:.4} vs true reward std {:.4} (ratio {:.3})",
        s.alignment.mae,
        s.alignment.true_std,
        s.alignment.mae / s.alignment.true_std
    );
    println!("alignment.csv and correlation.json written to {}", out.display());
}

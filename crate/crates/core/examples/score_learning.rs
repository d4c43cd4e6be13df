//! Full loop with a scripted teacher: SAC learns from a reward model that is
//! itself fitted to global trajectory scores.
//!
//! cargo run --release --example score_learning -- [env] [seed] [noise_var] [budget] [episodes] [switch_threshold]

use std::time::Instant;

use scorerl::envs::EnvKind;
use scorerl::trainer::{run_experiment, RunConfig};

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let kind = EnvKind::from_name(args.get(1).map(String::as_str).unwrap_or("PointGoal")).expect("unknown env");
    let mut cfg = RunConfig::desk(kind);
    if let Some(seed) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.seed = seed;
    }
    if let Some(v) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.teacher.noise_variance = v;
    }
    if let Some(b) = args.get(4).and_then(|s| s.parse().ok()) {
        cfg.budget = b;
    }
    if let Some(e) = args.get(5).and_then(|s| s.parse().ok()) {
        cfg.episodes = e;
    }
    if let Some(t) = args.get(6).and_then(|s| s.parse().ok()) {
        cfg.schedule.switch_threshold = Some(t);
    }

    let start = Instant::now();
    let art = run_experiment(cfg).expect("run failed");
    for e in &art.report.eval_curve {
        let m = &art.metrics[e.episode];
        println!(
            "episode {:4}  scores {:3}  phase {:?}  eval normalized {:.3}  eval success {:.1}  trailing success {:.2}",
            e.episode, m.scores_used, m.phase, e.normalized_return, e.success_rate, m.trailing_success_rate
        );
    }
    let r = &art.report;
    println!(
        "final performance {:.3} with {} scores (phase switch at {:?}); wall time {:.1}s",
        r.final_performance,
        r.scores_used,
        r.phase_switch_episode,
        start.elapsed().as_secs_f64()
    );
}

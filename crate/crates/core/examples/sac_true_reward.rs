//! SAC trained on the ground-truth reward, compared against the scripted
//! expert controller on the same evaluation start states.
//!
//! cargo run --release --example sac_true_reward -- [env] [episodes] [seed]

use std::time::Instant;

use scorerl::envs::Environment;
use scorerl::trainer::{eval_seed, rollout, run_experiment, RewardSource, RunConfig};

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let env_name = args.get(1).cloned().unwrap_or_else(|| "PointGoal".into());
    let episodes = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(250);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let env = Environment::by_name(&env_name).expect("unknown env");
    let expert: Vec<_> = (0..10)
        .map(|k| {
            let t = rollout(&env, eval_seed(k), k as u64, 0, |s| env.expert_policy(s))
            .unwrap();
            (env.spec().normalized_return(t.true_return), t.success)
        })
        .collect();
    let expert_norm = expert.iter().map(|e| e.0).sum::<f64>() / 10.0;
    let expert_success = expert.iter().filter(|e| e.1).count() as f64 / 10.0;

    let mut cfg = RunConfig::desk(env.kind());
    cfg.episodes = episodes;
    cfg.seed = seed;
    cfg.reward_source = RewardSource::True;
    let start = Instant::now();
    let art = run_experiment(cfg).expect("run failed");
    for e in &art.report.eval_curve {
        println!(
            "episode {:4}  steps {:6}  normalized return {:.3}  success {:.1}",
            e.episode, e.env_steps, e.normalized_return, e.success_rate
        );
    }
    println!(
        "expert: normalized return {expert_norm:.3}, success {expert_success:.1}; \
         trailing training success {:.2}; wall time {:.1}s",
        art.report.final_success_rate,
        start.elapsed().as_secs_f64()
    );
}

//! Both toy tasks side by side: random actions vs the scripted expert.
//!
//! cargo run --release --example environments

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scorerl::envs::{EnvKind, Environment};
use scorerl::trainer::rollout;

fn main() {
    for kind in [EnvKind::PointGoal, EnvKind::SparseButton] {
        let env = Environment::new(kind);
        let spec = env.spec().clone();
        println!(
            "{}: state dim {}, action dim {}, horizon {}, returns in [{:.1}, {:.1}]",
            spec.name, spec.state_dim, spec.action_dim, spec.episode_length, spec.return_bounds[0], spec.return_bounds[1]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut rand_norm, mut rand_succ, mut exp_norm, mut exp_succ) = (0.0, 0, 0.0, 0);
        let n = 50;
        for seed in 0..n {
            let random = rollout(&env, seed, seed, 0, |_| {
                spec.action_bounds.iter().map(|b| rng.random_range(b[0]..b[1])).collect()
            })
            .unwrap();
            let expert = rollout(&env, seed, seed, 0, |o| env.expert_policy(o)).unwrap();
            rand_norm += spec.normalized_return(random.true_return);
            exp_norm += spec.normalized_return(expert.true_return);
            rand_succ += random.success as usize;
            exp_succ += expert.success as usize;
        }
        let n = n as f64;
        if kind.is_sparse() {
            println!("  random  success {:.2}\n  expert  success {:.2}", rand_succ as f64 / n, exp_succ as f64 / n);
        }
        println!("  random  normalized {:.3}\n  expert  normalized {:.3}", rand_norm / n, exp_norm / n);
    }
}

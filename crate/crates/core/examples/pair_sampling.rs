//! How often each scored trajectory lands in the first slot of a training pair.
//!
//! cargo run --release --example pair_sampling

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scorerl::buffers::{ScoringBuffer, Trajectory};
use scorerl::reward::{RewardInput, RewardLearnerConfig, RewardModel};
use scorerl::sampling::{priority_distribution, sample_pairs, PairSamplerConfig, PairScheme};

fn traj(id: u64) -> Trajectory {
    Trajectory {
        id,
        episode: 0,
        states: vec![vec![id as f64 * 0.1, 0.0]],
        actions: vec![vec![0.0]],
        true_rewards: vec![0.0],
        true_return: 0.0,
        success: false,
        positions: vec![[0.0, 0.0]],
        annotations: Vec::new(),
    }
}

fn main() {
    let scores = [2.0, 4.0, 6.0, 8.0];
    let mut d = ScoringBuffer::new((0.0, 10.0));
    for (i, &s) in scores.iter().enumerate() {
        d.add_scored(Arc::new(traj(i as u64)), s, i as u64).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = RewardModel::new(2, 1, RewardInput::StateAction, &RewardLearnerConfig::default(), &mut rng);
    println!("closed form (beta 3): {:?}", priority_distribution(&scores, 3.0));
    for scheme in [PairScheme::Uniform, PairScheme::Entropy, PairScheme::Priority] {
        let cfg = PairSamplerConfig {
            scheme,
            ..PairSamplerConfig::default()
        };
        let draws = 20_000;
        let pairs = sample_pairs(d.entries(), &cfg, draws, Some(&model), &mut rng).unwrap();
        let mut freq = vec![0.0; scores.len()];
        for (i, _) in pairs {
            freq[i] += 1.0 / draws as f64;
        }
        let shown: Vec<String> = freq.iter().map(|f| format!("{f:.3}")).collect();
        println!("{:9} first-slot frequency {}", scheme.name(), shown.join(" "));
    }
}

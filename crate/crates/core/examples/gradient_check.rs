//! Central finite differences against the analytic gradients of the reward
//! loss and the SAC critic and policy losses.
//!
//! cargo run --release --example gradient_check

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scorerl::buffers::Trajectory;
use scorerl::nn::{DenseNet, Matrix};
use scorerl::reward::{pair_loss, RewardInput, RewardLearnerConfig, RewardModel, SoftLabelPair};
use scorerl::sac::{critic_loss, policy_loss, standard_normal_matrix, SacAgent, SacConfig};

fn max_rel_err<F: Fn(&DenseNet) -> f64>(net: &DenseNet, analytic: &[f64], f: F) -> f64 {
    let h = 1e-5;
    (0..net.num_params())
        .map(|k| {
            let mut p = net.clone();
            *p.param_mut(k) += h;
            let mut m = net.clone();
            *m.param_mut(k) -= h;
            let numeric = (f(&p) - f(&m)) / (2.0 * h);
            (numeric - analytic[k]).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8)
        })
        .fold(0.0, f64::max)
}

fn random_traj(rng: &mut ChaCha8Rng, id: u64) -> Arc<Trajectory> {
    let len = 5;
    Arc::new(Trajectory {
        id,
        episode: 0,
        states: (0..len).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        actions: (0..len).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        true_rewards: vec![0.0; len],
        true_return: 0.0,
        success: false,
        positions: vec![[0.0, 0.0]; len],
        annotations: Vec::new(),
    })
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let cfg = RewardLearnerConfig {
        hidden_layers: 2,
        hidden_units: 16,
        ..RewardLearnerConfig::default()
    };
    let model = RewardModel::new(4, 2, RewardInput::StateAction, &cfg, &mut rng);
    let batch: Vec<SoftLabelPair> = (0..8)
        .map(|k| {
            let (si, sj) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            SoftLabelPair::new(&cfg, random_traj(&mut rng, 2 * k), si, random_traj(&mut rng, 2 * k + 1), sj)
        })
        .collect();
    let (_, g) = pair_loss(&model, &batch).unwrap();
    let err = max_rel_err(model.net(), &g.flatten(), |net| {
        let mut m = model.clone();
        *m.net_mut() = net.clone();
        pair_loss(&m, &batch).unwrap().0
    });
    println!("reward loss     {} params  max rel error {err:.2e}", model.net().num_params());

    let sac_cfg = SacConfig {
        hidden_units: 16,
        ..SacConfig::default()
    };
    let agent = SacAgent::new(4, &[[-1.0, 1.0], [-2.0, 2.0]], sac_cfg, &mut rng);
    let n = 16;
    let states = Matrix::from_rows(&(0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap();
    let actions = Matrix::from_rows(&(0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]).collect::<Vec<_>>()).unwrap();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let (q1, q2) = agent.critics();
    let (_, g) = critic_loss(q1, &states, &actions, &targets).unwrap();
    let err = max_rel_err(q1, &g.flatten(), |q| critic_loss(q, &states, &actions, &targets).unwrap().0);
    println!("critic loss     {} params  max rel error {err:.2e}", q1.num_params());

    let eps = standard_normal_matrix(n, 2, &mut rng);
    let alpha = agent.alpha();
    let (_, g, _) = policy_loss(agent.policy(), q1, q2, alpha, &states, &eps, agent.scaling()).unwrap();
    let err = max_rel_err(agent.policy(), &g.flatten(), |p| {
        policy_loss(p, q1, q2, alpha, &states, &eps, agent.scaling()).unwrap().0
    });
    println!("policy loss     {} params  max rel error {err:.2e}", agent.policy().num_params());
}

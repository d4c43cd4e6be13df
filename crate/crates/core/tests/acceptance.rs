//! End-to-end acceptance checks. Runs every criterion, prints one PASS/FAIL
//! line each, then fails if any of them failed.
//!
//! The learning criteria train real agents and take most of an hour on one
//! core. Set `SCORERL_ACCEPTANCE=quick` to run only the fast ones.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scorerl::buffers::{ScoringBuffer, Trajectory};
use scorerl::envs::{EnvKind, Environment};
use scorerl::metrics::analyze_run;
use scorerl::nn::{DenseNet, Matrix};
use scorerl::reward::{pair_loss, soft_label, LabelSmoothing, RewardInput, RewardLearnerConfig, RewardModel, SoftLabelPair};
use scorerl::sac::{alpha_loss, critic_loss, policy_loss, standard_normal_matrix, SacAgent, SacConfig};
use scorerl::sampling::{sample_pairs, PairSamplerConfig, PairScheme};
use scorerl::teacher::{kendall_tau_b, noisy_score, perfect_score, TeacherConfig};
use scorerl::trainer::{
    eval_seed, rollout, run_ablation, run_experiment, run_to_dir, Arm, RewardSource, RunConfig, Trainer,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn central_difference<F: Fn(&DenseNet) -> f64>(net: &DenseNet, k: usize, f: &F) -> f64 {
    let h = 1e-5;
    let mut p = net.clone();
    *p.param_mut(k) += h;
    let mut m = net.clone();
    *m.param_mut(k) -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Worst relative error over the given parameters of `net`.
fn fd_worst_over<F: Fn(&DenseNet) -> f64>(net: &DenseNet, analytic: &[f64], coords: &[usize], f: F) -> (f64, usize) {
    let worst = coords
        .iter()
        .map(|&k| rel_err(analytic[k], central_difference(net, k, &f)))
        .fold(0.0, f64::max);
    (worst, coords.len())
}

fn fd_worst<F: Fn(&DenseNet) -> f64>(net: &DenseNet, analytic: &[f64], f: F) -> (f64, usize) {
    let all: Vec<usize> = (0..net.num_params()).collect();
    fd_worst_over(net, analytic, &all, f)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize, half: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..width).map(|_| rng.random_range(-half..half)).collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn random_traj(rng: &mut ChaCha8Rng, id: u64, len: usize) -> Arc<Trajectory> {
    Arc::new(Trajectory {
        id,
        episode: 0,
        states: (0..len).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        actions: (0..len).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        true_rewards: vec![0.0; len],
        true_return: 0.0,
        success: false,
        positions: vec![[0.0, 0.0]; len],
        annotations: Vec::new(),
    })
}

fn c1_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = RewardLearnerConfig {
        hidden_layers: 2,
        hidden_units: 12,
        ..RewardLearnerConfig::default()
    };
    let model = RewardModel::new(6, 2, RewardInput::StateAction, &cfg, &mut rng);
    let batch: Vec<SoftLabelPair> = (0..8)
        .map(|k| {
            let (si, sj) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let ti = random_traj(&mut rng, 2 * k, 6);
            let tj = random_traj(&mut rng, 2 * k + 1, 6);
            SoftLabelPair::new(&cfg, ti, si, tj, sj)
        })
        .collect();
    let (_, g) = pair_loss(&model, &batch).unwrap();
    let g = g.flatten();
    let loss_of = |net: &DenseNet| {
        let mut m = model.clone();
        *m.net_mut() = net.clone();
        pair_loss(&m, &batch).unwrap().0
    };
    // The output bias shifts both returns of an equal-length pair alike, so its
    // gradient is exactly zero and only rounding noise is left to compare.
    let bias = model.net().num_params() - 1;
    let bias_numeric = central_difference(model.net(), bias, &loss_of);
    let bias_ok = g[bias].abs() < 1e-12 && bias_numeric.abs() < 1e-9;
    let coords: Vec<usize> = (0..bias).collect();
    let (reward_err, reward_n) = fd_worst_over(model.net(), &g, &coords, loss_of);

    let sac_cfg = SacConfig {
        hidden_units: 12,
        ..SacConfig::default()
    };
    let agent = SacAgent::new(6, &[[-1.0, 1.0], [-1.0, 1.0]], sac_cfg, &mut rng);
    let n = 12;
    let states = random_rows(&mut rng, n, 6, 1.0);
    let actions = random_rows(&mut rng, n, 2, 1.0);
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (q1, q2) = agent.critics();
    let (_, g) = critic_loss(q1, &states, &actions, &targets).unwrap();
    let (critic_err, critic_n) = fd_worst(q1, &g.flatten(), |q| critic_loss(q, &states, &actions, &targets).unwrap().0);
    let eps = standard_normal_matrix(n, 2, &mut rng);
    let alpha = 0.2;
    let scaling = agent.scaling();
    let (_, g, log_probs) = policy_loss(agent.policy(), q1, q2, alpha, &states, &eps, scaling).unwrap();
    let (policy_err, policy_n) = fd_worst(agent.policy(), &g.flatten(), |p| {
        policy_loss(p, q1, q2, alpha, &states, &eps, scaling).unwrap().0
    });
    let (la, target) = (-0.7, -2.0);
    let (_, ga) = alpha_loss(la, &log_probs, target);
    let h = 1e-5;
    let alpha_err = rel_err(ga, (alpha_loss(la + h, &log_probs, target).0 - alpha_loss(la - h, &log_probs, target).0) / (2.0 * h));

    let sac_err = critic_err.max(policy_err).max(alpha_err);
    Outcome::new(
        bias_ok && reward_err < 1e-4 && sac_err < 1e-3 && reward_n >= 100 && critic_n >= 100 && policy_n >= 100,
        format!(
            "reward {reward_err:.1e} over {reward_n} coords (output bias {bias_numeric:.0e}); critic {critic_err:.1e} over {critic_n}; \
             policy {policy_err:.1e} over {policy_n}; alpha {alpha_err:.1e}"
        ),
    )
}

fn c2_soft_labels() -> Outcome {
    let label = |si: f64, sj: f64| soft_label(si, sj, LabelSmoothing::Adaptive, 2.0, 0.05, 0.2, 2);
    let tie = label(5.0, 5.1);
    let gap2 = label(3.0, 5.0);
    let mut ok = tie.mu == 0.5 && tie.mu_tilde == 0.5 && gap2.mu == 1.0 && gap2.mu_tilde == 0.96875;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        if (label(a, b).mu_tilde + label(b, a).mu_tilde - 1.0).abs() > 1e-15 {
            violations += 1;
        }
        // Raising the second score can only make it more preferred.
        let c = rng.random_range(b..=10.0);
        if label(a, c).mu_tilde < label(a, b).mu_tilde {
            violations += 1;
        }
    }
    ok &= violations == 0;
    Outcome::new(
        ok,
        format!("tie {} and gap-2 {} labels, {violations} antisymmetry/monotonicity violations in 10^4 pairs", tie.mu_tilde, gap2.mu_tilde),
    )
}

fn first_slot_frequencies(scores: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let mut d = ScoringBuffer::new((0.0, 10.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, &s) in scores.iter().enumerate() {
        d.add_scored(random_traj(&mut rng, k as u64, 2), s, k as u64).unwrap();
    }
    let cfg = PairSamplerConfig {
        scheme: PairScheme::Priority,
        beta: 3.0,
        ..PairSamplerConfig::default()
    };
    let mut freq = vec![0.0; scores.len()];
    for (i, _) in sample_pairs(d.entries(), &cfg, draws, None, &mut rng).unwrap() {
        freq[i] += 1.0 / draws as f64;
    }
    freq
}

fn c3_priority() -> Outcome {
    let draws = 100_000;
    // 8 : 64 : 216 out of 288.
    let closed = [8.0 / 288.0, 64.0 / 288.0, 216.0 / 288.0];
    let freq = first_slot_frequencies(&[2.0, 4.0, 6.0], draws, 303);
    let dev = freq.iter().zip(&closed).map(|(f, c)| (f - c).abs()).fold(0.0, f64::max);
    let flat = first_slot_frequencies(&[5.0, 5.0, 5.0], draws, 304);
    let flat_dev = flat.iter().map(|f| (f - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    Outcome::new(
        dev <= 0.02 && flat_dev <= 0.02,
        format!("frequencies {freq:.4?} vs {closed:.4?} (max dev {dev:.4}); equal scores max dev {flat_dev:.4}"),
    )
}

/// τ_B from tie-group sizes, written independently of the library.
fn tau_b_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as i64;
    let mut s = 0i64;
    for i in 0..xs.len() {
        for j in 0..i {
            let sx = (xs[i] - xs[j]).signum() as i64 * (xs[i] != xs[j]) as i64;
            let sy = (ys[i] - ys[j]).signum() as i64 * (ys[i] != ys[j]) as i64;
            s += sx * sy;
        }
    }
    let tie_pairs = |v: &[f64]| -> i64 {
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted
            .chunk_by(|a, b| a == b)
            .map(|g| g.len() as i64 * (g.len() as i64 - 1) / 2)
            .sum()
    };
    let n0 = n * (n - 1) / 2;
    let (n1, n2) = (tie_pairs(xs), tie_pairs(ys));
    s as f64 / (((n0 - n2) as f64) * ((n0 - n1) as f64)).sqrt()
}

fn c4_kendall() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..80);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        if xs.iter().all(|&x| x == xs[0]) || ys.iter().all(|&y| y == ys[0]) {
            continue;
        }
        if kendall_tau_b(&xs, &ys).unwrap().tau_b != tau_b_oracle(&xs, &ys) {
            mismatches += 1;
        }
    }
    let x: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let same = kendall_tau_b(&x, &x).unwrap().tau_b;
    let flipped = kendall_tau_b(&x, &neg).unwrap().tau_b;
    Outcome::new(
        mismatches == 0 && same == 1.0 && flipped == -1.0,
        format!("{mismatches} oracle mismatches over 200 sequences; tau(x,x)={same}, tau(x,-x)={flipped}"),
    )
}

fn c5_relabel() -> Outcome {
    let mut cfg = RunConfig::desk(EnvKind::PointGoal);
    cfg.episodes = 40;
    cfg.episode_length = 50;
    cfg.sac.warmup_steps = 200;
    let mut trainer = Trainer::new(cfg).unwrap();
    let (mut checked, mut mismatched, mut updates) = (0usize, 0usize, 0);
    let mut last_steps = trainer.reward_model().train_steps();
    while !trainer.is_finished() {
        trainer.step_episode().unwrap();
        let model = trainer.reward_model();
        if model.train_steps() != last_steps {
            updates += 1;
            last_steps = model.train_steps();
        }
        for t in trainer.replay().iter() {
            checked += 1;
            if t.r_hat.to_bits() != model.reward(&t.s, &t.a).to_bits() {
                mismatched += 1;
            }
        }
    }
    Outcome::new(
        mismatched == 0 && updates >= 2,
        format!("{checked} transition checks after {updates} reward updates, {mismatched} mismatches"),
    )
}

fn expert_normalized(env: &Environment, episodes: usize) -> f64 {
    (0..episodes)
        .map(|k| {
            let t = rollout(env, eval_seed(k), k as u64, 0, |s| env.expert_policy(s)).unwrap();
            env.spec().normalized_return(t.true_return)
        })
        .sum::<f64>()
        / episodes as f64
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn c6_baseline(log: &mut String) -> (Outcome, f64) {
    let env = Environment::new(EnvKind::PointGoal);
    let base = RunConfig::desk(EnvKind::PointGoal);
    let expert = expert_normalized(&env, base.eval_episodes);
    let mut finals = Vec::new();
    let mut ok = true;
    for seed in SEEDS {
        let start = Instant::now();
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.reward_source = RewardSource::True;
        let r = run_experiment(cfg).unwrap().report;
        let steps = r.env_steps;
        ok &= steps <= 60_000 && r.final_performance >= 0.9 * expert;
        writeln!(
            log,
            "  c6 seed {seed}: final {:.3} (best {:.3}) after {steps} steps, {:.0}s",
            r.final_performance,
            r.best_eval_within(60_000).unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        finals.push(r.final_performance);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    (
        Outcome::new(ok, format!("normalized eval {finals:.3?} vs 0.9 x expert {expert:.3} = {:.3}", 0.9 * expert)),
        mean,
    )
}

fn c7_score_learning(baseline: f64, log: &mut String) -> Outcome {
    let mut point = Vec::new();
    let mut point_ok = true;
    for seed in SEEDS {
        let start = Instant::now();
        let mut cfg = RunConfig::desk(EnvKind::PointGoal);
        cfg.seed = seed;
        let r = run_experiment(cfg).unwrap().report;
        point_ok &= r.scores_used <= 250 && r.final_performance >= 0.8 * baseline;
        writeln!(log, "  c7 PointGoal seed {seed}: {:.3} with {} scores, {:.0}s", r.final_performance, r.scores_used, start.elapsed().as_secs_f64()).unwrap();
        point.push(r.final_performance);
    }
    let mut sparse = Vec::new();
    let mut sparse_ok = true;
    for seed in SEEDS {
        let start = Instant::now();
        let mut cfg = RunConfig::desk(EnvKind::SparseButton);
        cfg.seed = seed;
        let r = run_experiment(cfg).unwrap().report;
        sparse_ok &= r.scores_used <= 500 && r.final_performance >= 0.6;
        writeln!(log, "  c7 SparseButton seed {seed}: {:.3} with {} scores, {:.0}s", r.final_performance, r.scores_used, start.elapsed().as_secs_f64()).unwrap();
        sparse.push(r.final_performance);
    }
    Outcome::new(
        point_ok && sparse_ok,
        format!(
            "PointGoal {point:.3?} vs 0.8 x baseline {:.3}; SparseButton success {sparse:.2?} vs 0.6",
            0.8 * baseline
        ),
    )
}

fn noisy_sparse() -> RunConfig {
    let mut cfg = RunConfig::desk(EnvKind::SparseButton);
    cfg.teacher.noise_variance = 0.4;
    cfg
}

/// Returns (criterion 8, criterion 9).
fn c8_c9_ablations(log: &mut String) -> (Outcome, Outcome) {
    let base = noisy_sparse();
    let start = Instant::now();
    let smoothing = run_ablation(&base, &[Arm::Adaptive, Arm::Constant, Arm::Hard], &SEEDS).unwrap();
    // The default arm already uses priority sampling with adaptive smoothing.
    let sampling = run_ablation(&base, &[Arm::Uniform, Arm::Entropy], &SEEDS).unwrap();
    for r in smoothing.iter().chain(&sampling) {
        writeln!(log, "  {} {:?}", r.arm.name(), r.final_performance).unwrap();
    }
    writeln!(log, "  ablations took {:.0}s", start.elapsed().as_secs_f64()).unwrap();
    let (adaptive, constant, hard) = (smoothing[0].mean, smoothing[1].mean, smoothing[2].mean);
    let (uniform, entropy) = (sampling[0].mean, sampling[1].mean);
    (
        Outcome::new(
            adaptive >= constant && adaptive >= hard,
            format!("mean success adaptive {adaptive:.3}, constant {constant:.3}, hard {hard:.3}"),
        ),
        Outcome::new(
            adaptive >= uniform && adaptive >= entropy,
            format!("mean success priority {adaptive:.3}, uniform {uniform:.3}, entropy {entropy:.3}"),
        ),
    )
}

fn c10_extrapolation(log: &mut String) -> Outcome {
    // The true PointGoal reward depends on position only, so the reward net
    // sees states alone, and querying stays in the fast phase until the
    // 250-score budget is spent.
    let mut cfg = RunConfig::desk(EnvKind::PointGoal);
    cfg.episodes = 500;
    cfg.reward.input = RewardInput::StateOnly;
    cfg.schedule.switch_threshold = Some(1.1);
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let r = run_to_dir(cfg, dir.path()).unwrap().report;
    writeln!(log, "  c10 reward run: {:.3} with {} scores, {:.0}s", r.final_performance, r.scores_used, start.elapsed().as_secs_f64()).unwrap();
    let s = analyze_run(dir.path()).unwrap();
    let ratio = s.alignment.mae / s.alignment.true_std;
    Outcome::new(
        s.correlation.kendall_tau_b >= 0.8 && ratio < 0.25,
        format!(
            "tau_b {:.3} over {} held-out trajectories; aligned MAE {:.4} = {ratio:.3} x true std",
            s.correlation.kendall_tau_b, s.trajectories, s.alignment.mae
        ),
    )
}

fn c11_calibration() -> Outcome {
    let base = TeacherConfig::new((0.0, 10.0), [0.0, 100.0]);
    let returns: Vec<f64> = (0..500).map(|i| 25.0 + 50.0 * i as f64 / 499.0).collect();
    let perfect: Vec<f64> = returns.iter().map(|&g| perfect_score(&base, g)).collect();
    let taus = |var: f64| -> Vec<f64> {
        let cfg = base.clone().with_noise(var);
        (0..10)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
                let noisy: Vec<f64> = returns.iter().map(|&g| noisy_score(&cfg, g, &mut rng)).collect();
                kendall_tau_b(&noisy, &perfect).unwrap().tau_b
            })
            .collect()
    };
    let (low, high) = (taus(0.4), taus(0.8));
    let ok = low.iter().all(|t| (t - 0.8).abs() <= 0.07) && high.iter().all(|t| (t - 0.65).abs() <= 0.07);
    let range = |v: &[f64]| (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(0.0, f64::max));
    Outcome::new(
        ok,
        format!(
            "variance 0.4: tau_b in [{:.3}, {:.3}]; variance 0.8: [{:.3}, {:.3}] over 10 draws",
            range(&low).0,
            range(&low).1,
            range(&high).0,
            range(&high).1
        ),
    )
}

fn c12_determinism() -> Outcome {
    let mut cfg = RunConfig::desk(EnvKind::PointGoal);
    cfg.episodes = 40;
    cfg.seed = 12;
    let bytes = |cfg: RunConfig| {
        let dir = tempfile::tempdir().unwrap();
        run_to_dir(cfg, dir.path()).unwrap();
        std::fs::read(dir.path().join("metrics.jsonl")).unwrap()
    };
    let (a, b) = (bytes(cfg.clone()), bytes(cfg));
    Outcome::new(a == b && !a.is_empty(), format!("{} vs {} bytes, identical: {}", a.len(), b.len(), a == b))
}

#[test]
fn acceptance() {
    let quick = std::env::var("SCORERL_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let mut results: Vec<(u32, Outcome)> = vec![
        (1, c1_gradients()),
        (2, c2_soft_labels()),
        (3, c3_priority()),
        (4, c4_kendall()),
        (5, c5_relabel()),
    ];
    let mut log = String::new();
    if !quick {
        let (c6, baseline) = c6_baseline(&mut log);
        results.push((6, c6));
        results.push((7, c7_score_learning(baseline, &mut log)));
        let (c8, c9) = c8_c9_ablations(&mut log);
        results.push((8, c8));
        results.push((9, c9));
        results.push((10, c10_extrapolation(&mut log)));
    }
    results.push((11, c11_calibration()));
    results.push((12, c12_determinism()));
    results.sort_by_key(|r| r.0);

    print!("{log}");
    for (k, o) in &results {
        println!("criterion {k:2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

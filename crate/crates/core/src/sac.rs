//! Soft actor-critic with twin critics, tanh-squashed Gaussian policy and
//! automatic entropy tuning. Rewards come from the transitions as stored,
//! i.e. from the learned reward model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::buffers::Transition;
use crate::nn::{Activation, AdamState, DenseNet, Gradients, Matrix, NnError};
use crate::reward::softplus;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SacError {
    #[error("{loss} loss diverged ({value})")]
    Diverged { loss: &'static str, value: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Polyak coefficient for the target critics.
    pub tau: f64,
    pub batch_size: usize,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim` when absent.
    pub target_entropy: Option<f64>,
    /// Random-action steps collected before the first update.
    pub warmup_steps: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_units: 256,
            learning_rate: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            initial_alpha: 1.0,
            target_entropy: None,
            warmup_steps: 1000,
        }
    }
}

/// A minibatch laid out as matrices.
#[derive(Debug, Clone)]
pub struct SacBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl SacBatch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self, SacError> {
        if batch.is_empty() {
            return Err(SacError::EmptyBatch);
        }
        let states: Vec<&[f64]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let actions: Vec<&[f64]> = batch.iter().map(|t| t.a.as_slice()).collect();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.s_next.as_slice()).collect();
        Ok(Self {
            states: Matrix::from_rows(&states)?,
            actions: Matrix::from_rows(&actions)?,
            rewards: batch.iter().map(|t| t.r_hat).collect(),
            next_states: Matrix::from_rows(&next)?,
            dones: batch.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
    pub alpha: f64,
    pub alpha_value: f64,
}

/// Squashed Gaussian sample for one batch of policy outputs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    /// Pre-squash Gaussian sample `u = mean + std·eps`.
    pub pre_tanh: Matrix,
    pub actions: Matrix,
    pub log_probs: Vec<f64>,
    pub log_std: Matrix,
    /// Whether each raw log-std output fell inside the clamp range.
    pub log_std_active: Vec<bool>,
}

/// Affine map from `[-1, 1]` to the action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScaling {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ActionScaling {
    pub fn from_bounds(bounds: &[[f64; 2]]) -> Self {
        Self {
            scale: bounds.iter().map(|[lo, hi]| (hi - lo) / 2.0).collect(),
            bias: bounds.iter().map(|[lo, hi]| (hi + lo) / 2.0).collect(),
        }
    }
}

/// `log(1 − tanh²(u))` computed without cancellation.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `a = tanh(u)·scale + bias`, `u ~ N(mean, exp(log_std)²)`,
/// written in terms of `u`.
pub fn squashed_log_prob(u: f64, mean: f64, log_std: f64, scale: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_2PI - scale.ln() - log_one_minus_tanh_sq(u)
}

/// Reparameterized sample from raw policy outputs `[mean | log_std]` with
/// fixed standard-normal noise `eps`.
pub fn squash_sample(raw: &Matrix, eps: &Matrix, scaling: &ActionScaling) -> PolicySample {
    let ad = scaling.scale.len();
    let n = raw.rows();
    let mut pre_tanh = Matrix::zeros(n, ad);
    let mut actions = Matrix::zeros(n, ad);
    let mut log_std = Matrix::zeros(n, ad);
    let mut active = vec![true; n * ad];
    let mut log_probs = vec![0.0; n];
    for i in 0..n {
        let row = raw.row(i);
        for k in 0..ad {
            let raw_ls = row[ad + k];
            let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            active[i * ad + k] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls);
            let u = row[k] + ls.exp() * eps.get(i, k);
            pre_tanh.set(i, k, u);
            log_std.set(i, k, ls);
            actions.set(i, k, u.tanh() * scaling.scale[k] + scaling.bias[k]);
            log_probs[i] += squashed_log_prob(u, row[k], ls, scaling.scale[k]);
        }
    }
    PolicySample {
        pre_tanh,
        actions,
        log_probs,
        log_std,
        log_std_active: active,
    }
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Mean squared TD error of one critic and its parameter gradient.
pub fn critic_loss(critic: &DenseNet, states: &Matrix, actions: &Matrix, targets: &[f64]) -> Result<(f64, Gradients), SacError> {
    let inputs = states.hstack(actions)?;
    let cache = critic.forward_cached(&inputs)?;
    let n = targets.len() as f64;
    let q = cache.output().as_slice();
    let mut upstream = Matrix::zeros(targets.len(), 1);
    let mut loss = 0.0;
    for (i, (&qi, &yi)) in q.iter().zip(targets).enumerate() {
        let err = qi - yi;
        loss += err * err / n;
        upstream.set(i, 0, 2.0 * err / n);
    }
    let (grads, _) = critic.backward(&cache, &upstream)?;
    Ok((loss, grads))
}

/// Policy objective `mean(α·log π(a|s) − min(Q1, Q2)(s, a))` with fixed noise.
/// Returns the loss, the policy gradient and the per-sample log-probs.
pub fn policy_loss(
    policy: &DenseNet,
    q1: &DenseNet,
    q2: &DenseNet,
    alpha: f64,
    states: &Matrix,
    eps: &Matrix,
    scaling: &ActionScaling,
) -> Result<(f64, Gradients, Vec<f64>), SacError> {
    let n = states.rows();
    let ad = scaling.scale.len();
    let cache = policy.forward_cached(states)?;
    let sample = squash_sample(cache.output(), eps, scaling);
    let inputs = states.hstack(&sample.actions)?;
    let c1 = q1.forward_cached(&inputs)?;
    let c2 = q2.forward_cached(&inputs)?;
    let inv_n = 1.0 / n as f64;
    let mut up1 = Matrix::zeros(n, 1);
    let mut up2 = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for i in 0..n {
        let (v1, v2) = (c1.output().get(i, 0), c2.output().get(i, 0));
        let min_q = if v1 <= v2 {
            up1.set(i, 0, -inv_n);
            v1
        } else {
            up2.set(i, 0, -inv_n);
            v2
        };
        loss += (alpha * sample.log_probs[i] - min_q) * inv_n;
    }
    // dL/da through whichever critic attained the minimum.
    let (_, dx1) = q1.backward(&c1, &up1)?;
    let (_, dx2) = q2.backward(&c2, &up2)?;
    let sd = states.cols();
    let mut upstream = Matrix::zeros(n, 2 * ad);
    for i in 0..n {
        for k in 0..ad {
            let d_action = dx1.get(i, sd + k) + dx2.get(i, sd + k);
            let u = sample.pre_tanh.get(i, k);
            let t = u.tanh();
            let scale = scaling.scale[k];
            // ∂a/∂u = scale·(1 − t²); ∂logπ/∂u (with eps fixed) = 2t.
            let g_u = d_action * scale * (1.0 - t * t) + alpha * inv_n * 2.0 * t;
            let std = sample.log_std.get(i, k).exp();
            upstream.set(i, k, g_u);
            let g_ls = if sample.log_std_active[i * ad + k] {
                g_u * std * eps.get(i, k) - alpha * inv_n
            } else {
                0.0
            };
            upstream.set(i, ad + k, g_ls);
        }
    }
    let (grads, _) = policy.backward(&cache, &upstream)?;
    Ok((loss, grads, sample.log_probs))
}

/// Entropy-temperature objective `−mean(log α · (log π + H̄))` and its
/// derivative with respect to `log α`.
pub fn alpha_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    let n = log_probs.len() as f64;
    let mean: f64 = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / n;
    (-log_alpha * mean, -mean)
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: SacConfig,
    state_dim: usize,
    action_dim: usize,
    scaling: ActionScaling,
    policy: DenseNet,
    q1: DenseNet,
    q2: DenseNet,
    q1_target: DenseNet,
    q2_target: DenseNet,
    log_alpha: f64,
    target_entropy: f64,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    alpha_opt: AdamState,
    updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_bounds: &[[f64; 2]],
        cfg: SacConfig,
        rng: &mut R,
    ) -> Self {
        let action_dim = action_bounds.len();
        let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
        let policy = DenseNet::mlp(state_dim, &hidden, 2 * action_dim, Activation::Relu, Activation::Identity, rng);
        let q1 = DenseNet::mlp(state_dim + action_dim, &hidden, 1, Activation::Relu, Activation::Identity, rng);
        let q2 = DenseNet::mlp(state_dim + action_dim, &hidden, 1, Activation::Relu, Activation::Identity, rng);
        let lr = cfg.learning_rate;
        Self {
            target_entropy: cfg.target_entropy.unwrap_or(-(action_dim as f64)),
            log_alpha: cfg.initial_alpha.ln(),
            state_dim,
            action_dim,
            scaling: ActionScaling::from_bounds(action_bounds),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            policy_opt: AdamState::new(lr),
            q1_opt: AdamState::new(lr),
            q2_opt: AdamState::new(lr),
            alpha_opt: AdamState::new(lr),
            updates: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn scaling(&self) -> &ActionScaling {
        &self.scaling
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    pub fn critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.q1, &self.q2)
    }

    pub fn target_critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.q1_target, &self.q2_target)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Action for one state: the squashed mean when `deterministic`, a
    /// squashed Gaussian sample otherwise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Vec<f64> {
        let raw = self
            .policy
            .forward_batch(&Matrix::row_vector(state))
            .expect("state width fixed at construction");
        let eps = if deterministic {
            Matrix::zeros(1, self.action_dim)
        } else {
            standard_normal_matrix(1, self.action_dim, rng)
        };
        squash_sample(&raw, &eps, &self.scaling).actions.into_vec()
    }

    /// Bootstrapped critic targets `r + γ(1 − done)(min Q̄(s', a') − α log π(a'|s'))`.
    pub fn critic_targets(&self, batch: &SacBatch, eps_next: &Matrix) -> Result<Vec<f64>, SacError> {
        let raw = self.policy.forward_batch(&batch.next_states)?;
        let next = squash_sample(&raw, eps_next, &self.scaling);
        let inputs = batch.next_states.hstack(&next.actions)?;
        let t1 = self.q1_target.forward_batch(&inputs)?;
        let t2 = self.q2_target.forward_batch(&inputs)?;
        let alpha = self.alpha();
        Ok((0..batch.len())
            .map(|i| {
                let soft_v = t1.get(i, 0).min(t2.get(i, 0)) - alpha * next.log_probs[i];
                let mask = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + self.cfg.gamma * mask * soft_v
            })
            .collect())
    }

    /// One gradient step on both critics, the policy and the temperature,
    /// followed by a Polyak update of the target critics.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<SacLosses, SacError> {
        if batch.is_empty() {
            return Err(SacError::EmptyBatch);
        }
        let n = batch.len();
        let eps_next = standard_normal_matrix(n, self.action_dim, rng);
        let targets = self.critic_targets(batch, &eps_next)?;

        let (l1, g1) = critic_loss(&self.q1, &batch.states, &batch.actions, &targets)?;
        check("q1", l1)?;
        let (l2, g2) = critic_loss(&self.q2, &batch.states, &batch.actions, &targets)?;
        check("q2", l2)?;
        self.q1_opt.step_net(&mut self.q1, &g1).map_err(|_| diverged("q1", l1))?;
        self.q2_opt.step_net(&mut self.q2, &g2).map_err(|_| diverged("q2", l2))?;

        let eps = standard_normal_matrix(n, self.action_dim, rng);
        let alpha = self.alpha();
        let (lp, gp, log_probs) = policy_loss(&self.policy, &self.q1, &self.q2, alpha, &batch.states, &eps, &self.scaling)?;
        check("policy", lp)?;
        self.policy_opt
            .step_net(&mut self.policy, &gp)
            .map_err(|_| diverged("policy", lp))?;

        let (la, ga) = alpha_loss(self.log_alpha, &log_probs, self.target_entropy);
        check("alpha", la)?;
        let mut la_param = [self.log_alpha];
        self.alpha_opt
            .step(vec![&mut la_param[..]], vec![&[ga][..]])
            .map_err(|_| diverged("alpha", la))?;
        self.log_alpha = la_param[0];

        self.q1_target.soft_update_from(&self.q1, self.cfg.tau);
        self.q2_target.soft_update_from(&self.q2, self.cfg.tau);
        self.updates += 1;
        Ok(SacLosses {
            q1: l1,
            q2: l2,
            policy: lp,
            alpha: la,
            alpha_value: self.alpha(),
        })
    }

    pub fn to_checkpoint(&self) -> Value {
        json!({
            "policy": self.policy.to_snapshot(),
            "q1": self.q1.to_snapshot(),
            "q2": self.q2.to_snapshot(),
            "q1_target": self.q1_target.to_snapshot(),
            "q2_target": self.q2_target.to_snapshot(),
            "log_alpha": self.log_alpha,
        })
    }

    /// Restores network weights and temperature; optimizer moments restart.
    pub fn load_checkpoint(&mut self, value: &Value) -> Result<(), SacError> {
        let net = |key: &str| -> Result<DenseNet, SacError> {
            let v = value
                .get(key)
                .ok_or_else(|| SacError::InvalidCheckpoint(format!("missing `{key}`")))?;
            Ok(DenseNet::from_snapshot(v)?)
        };
        let policy = net("policy")?;
        if policy.input_dim() != self.state_dim || policy.output_dim() != 2 * self.action_dim {
            return Err(SacError::InvalidCheckpoint("policy shape mismatch".into()));
        }
        self.policy = policy;
        self.q1 = net("q1")?;
        self.q2 = net("q2")?;
        self.q1_target = net("q1_target")?;
        self.q2_target = net("q2_target")?;
        self.log_alpha = value
            .get("log_alpha")
            .and_then(Value::as_f64)
            .ok_or_else(|| SacError::InvalidCheckpoint("missing `log_alpha`".into()))?;
        Ok(())
    }

    /// Replaces only the policy network, e.g. for evaluation rollouts.
    pub fn with_policy(&self, policy: DenseNet) -> Self {
        let mut out = self.clone();
        out.policy = policy;
        out
    }
}

fn diverged(loss: &'static str, value: f64) -> SacError {
    SacError::Diverged { loss, value }
}

fn check(loss: &'static str, value: f64) -> Result<(), SacError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(diverged(loss, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(seed: u64) -> SacAgent {
        let cfg = SacConfig {
            hidden_units: 8,
            batch_size: 6,
            ..SacConfig::default()
        };
        SacAgent::new(3, &[[-1.0, 1.0], [-2.0, 0.0]], cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> SacBatch {
        let m = |rows, cols, rng: &mut ChaCha8Rng| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        SacBatch {
            states: m(n, 3, rng),
            actions: m(n, 2, rng),
            rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            next_states: m(n, 3, rng),
            dones: (0..n).map(|i| i % 3 == 0).collect(),
        }
    }

    #[test]
    fn actions_stay_in_bounds() {
        let a = agent(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let act = a.act(&s, false, &mut rng);
            assert!((-1.0..=1.0).contains(&act[0]));
            assert!((-2.0..=0.0).contains(&act[1]));
        }
    }

    #[test]
    fn deterministic_action_is_reproducible() {
        let a = agent(0);
        let s = [0.2, -0.4, 0.9];
        let x = a.act(&s, true, &mut ChaCha8Rng::seed_from_u64(1));
        let y = a.act(&s, true, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(x, y);
    }

    /// Gaussian mass of the preimage of `[a − h, a + h]` by composite Simpson
    /// quadrature, divided by the interval width.
    fn density_by_quadrature(a: f64, mean: f64, std: f64, h: f64) -> f64 {
        let (lo, hi) = ((a - h).atanh(), (a + h).atanh());
        let pdf = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
        let n = 200;
        let w = (hi - lo) / n as f64;
        let mut s = pdf(lo) + pdf(hi);
        for k in 1..n {
            s += pdf(lo + k as f64 * w) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * w / 3.0 / (2.0 * h)
    }

    #[test]
    fn log_prob_matches_quadrature() {
        for &(mean, log_std, eps) in &[(0.3, -0.5, 0.7), (-1.2, 0.1, -0.4), (0.0, -1.0, 1.5), (0.8, 0.4, -1.1)] {
            let u: f64 = mean + f64::exp(log_std) * eps;
            let lp = squashed_log_prob(u, mean, log_std, 1.0);
            let oracle = density_by_quadrature(u.tanh(), mean, f64::exp(log_std), 1e-4).ln();
            assert!((lp - oracle).abs() < 1e-6, "{lp} vs {oracle}");
        }
    }

    #[test]
    fn done_transitions_do_not_bootstrap() {
        let a = agent(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 6);
        let eps = standard_normal_matrix(6, 2, &mut rng);
        let y = a.critic_targets(&batch, &eps).unwrap();
        for i in 0..6 {
            if batch.dones[i] {
                assert_eq!(y[i], batch.rewards[i]);
            } else {
                assert_ne!(y[i], batch.rewards[i]);
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn fd_check<F: Fn(&DenseNet) -> f64>(net: &DenseNet, analytic: &[f64], f: F, tol: f64) {
        let h = 1e-5;
        for k in 0..net.num_params() {
            let mut p = net.clone();
            *p.param_mut(k) += h;
            let mut m = net.clone();
            *m.param_mut(k) -= h;
            let numeric = (f(&p) - f(&m)) / (2.0 * h);
            assert!(rel_err(analytic[k], numeric) < tol, "param {k}: {} vs {numeric}", analytic[k]);
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let a = agent(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = random_batch(&mut rng, 6);
        let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = critic_loss(&a.q1, &batch.states, &batch.actions, &targets).unwrap();
        fd_check(&a.q1, &g.flatten(), |q| critic_loss(q, &batch.states, &batch.actions, &targets).unwrap().0, 1e-3);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let a = agent(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 6);
        let eps = standard_normal_matrix(6, 2, &mut rng);
        let alpha = 0.3;
        let (_, g, _) = policy_loss(&a.policy, &a.q1, &a.q2, alpha, &batch.states, &eps, &a.scaling).unwrap();
        fd_check(
            &a.policy,
            &g.flatten(),
            |p| policy_loss(p, &a.q1, &a.q2, alpha, &batch.states, &eps, &a.scaling).unwrap().0,
            1e-3,
        );
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let lps = [-1.3, 0.4, 2.2];
        let (_, g) = alpha_loss(0.1, &lps, -2.0);
        let h = 1e-5;
        let numeric = (alpha_loss(0.1 + h, &lps, -2.0).0 - alpha_loss(0.1 - h, &lps, -2.0).0) / (2.0 * h);
        assert!(rel_err(g, numeric) < 1e-6);
    }

    #[test]
    fn update_applies_polyak_average() {
        let mut a = agent(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = random_batch(&mut rng, 6);
        let old_target = a.q1_target.flat_params();
        let losses = a.update(&batch, &mut rng).unwrap();
        assert!(losses.alpha_value > 0.0);
        let online = a.q1.flat_params();
        let tau = a.cfg.tau;
        for ((t, o), n) in old_target.iter().zip(&online).zip(a.q1_target.flat_params()) {
            assert_eq!(n, (1.0 - tau) * t + tau * o);
        }
        assert_eq!(a.updates(), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = agent(11);
        let mut b = agent(12);
        b.load_checkpoint(&a.to_checkpoint()).unwrap();
        assert_eq!(b.policy, a.policy);
        assert_eq!(b.q2_target, a.q2_target);
        assert_eq!(b.log_alpha, a.log_alpha);
        assert!(b.load_checkpoint(&json!({"policy": a.policy.to_snapshot()})).is_err());
    }
}

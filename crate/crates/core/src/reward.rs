//! Reward learning from global trajectory scores.
//!
//! Pairs of scored trajectories become soft preference labels whose
//! smoothing strength shrinks as the score gap grows. The reward network is
//! fit with a Bradley-Terry style cross-entropy on the difference of the
//! predicted episodic returns.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffers::{ScoringBuffer, Trajectory};
use crate::nn::{Activation, AdamState, DenseNet, Gradients, Matrix, NnError};
use crate::sampling::{sample_pairs, PairSamplerConfig, SamplingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("reward loss is not finite ({0})")]
    Diverged(f64),
    #[error("invalid reward-learner config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// What the reward network sees at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardInput {
    StateAction,
    StateOnly,
}

/// How hard preference labels are softened before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSmoothing {
    /// Strength `1 / (|Δs| + lambda)²`.
    Adaptive,
    /// Fixed strength `constant_alpha` for every pair.
    Constant,
    /// One-hot labels (ties still get 0.5).
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardLearnerConfig {
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub activation: Activation,
    /// Adaptive smoothing coefficient; must exceed 1.
    pub lambda: f64,
    pub tie_threshold: f64,
    pub num_labels: usize,
    pub scoring_range: (f64, f64),
    pub smoothing: LabelSmoothing,
    pub constant_alpha: f64,
    pub input: RewardInput,
}

impl Default for RewardLearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            hidden_layers: 3,
            hidden_units: 256,
            batch_size: 128,
            activation: Activation::LeakyRelu,
            lambda: 2.0,
            tie_threshold: 0.2,
            num_labels: 2,
            scoring_range: (0.0, 10.0),
            smoothing: LabelSmoothing::Adaptive,
            constant_alpha: 0.05,
            input: RewardInput::StateAction,
        }
    }
}

impl RewardLearnerConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidConfig(m.to_string()));
        if !(self.lambda > 1.0) {
            return bad("lambda must be greater than 1");
        }
        if !(self.tie_threshold >= 0.0) {
            return bad("tie_threshold must be non-negative");
        }
        if self.num_labels == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return bad("num_labels, batch_size and hidden_units must be positive");
        }
        if !(self.scoring_range.0 < self.scoring_range.1) {
            return bad("scoring range must satisfy lo < hi");
        }
        if !(0.0..=1.0).contains(&self.constant_alpha) {
            return bad("constant_alpha must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabel {
    pub mu: f64,
    pub mu_tilde: f64,
}

/// Hard preference `mu` (1 when `j` scored higher, 0.5 for ties closer than
/// `tie_threshold`) and its smoothed version.
pub fn soft_label(
    score_i: f64,
    score_j: f64,
    smoothing: LabelSmoothing,
    lambda: f64,
    constant_alpha: f64,
    tie_threshold: f64,
    num_labels: usize,
) -> SoftLabel {
    let gap = (score_i - score_j).abs();
    let mu = if gap < tie_threshold {
        0.5
    } else if score_i < score_j {
        1.0
    } else {
        0.0
    };
    let alpha = match smoothing {
        LabelSmoothing::Adaptive => 1.0 / (gap + lambda).powi(2),
        LabelSmoothing::Constant => constant_alpha,
        LabelSmoothing::Hard => 0.0,
    };
    SoftLabel {
        mu,
        mu_tilde: (1.0 - alpha) * mu + alpha / num_labels as f64,
    }
}

/// [`soft_label`] with the parameters taken from a config.
pub fn soft_label_for(cfg: &RewardLearnerConfig, score_i: f64, score_j: f64) -> SoftLabel {
    soft_label(
        score_i,
        score_j,
        cfg.smoothing,
        cfg.lambda,
        cfg.constant_alpha,
        cfg.tie_threshold,
        cfg.num_labels,
    )
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Probability that the trajectory with return `return_j` is preferred over
/// the one with `return_i`: `e^Rj / (e^Ri + e^Rj)`, evaluated as a logistic
/// of the difference.
pub fn preference_probability(return_i: f64, return_j: f64) -> f64 {
    sigmoid(return_j - return_i)
}

/// Binary entropy in nats of a Bernoulli(p).
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

#[derive(Debug, Clone)]
pub struct SoftLabelPair {
    pub traj_i: Arc<Trajectory>,
    pub traj_j: Arc<Trajectory>,
    pub score_i: f64,
    pub score_j: f64,
    pub mu: f64,
    pub mu_tilde: f64,
}

impl SoftLabelPair {
    pub fn new(
        cfg: &RewardLearnerConfig,
        traj_i: Arc<Trajectory>,
        score_i: f64,
        traj_j: Arc<Trajectory>,
        score_j: f64,
    ) -> Self {
        let label = soft_label_for(cfg, score_i, score_j);
        Self {
            traj_i,
            traj_j,
            score_i,
            score_j,
            mu: label.mu,
            mu_tilde: label.mu_tilde,
        }
    }
}

/// Per-step loss record written to the reward training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStepStats {
    pub step: u64,
    pub loss: f64,
    pub batch_tie_fraction: f64,
    pub dataset_size: usize,
}

/// Reward network `r̂(s, a)` with its optimizer.
#[derive(Debug, Clone)]
pub struct RewardModel {
    net: DenseNet,
    adam: AdamState,
    input: RewardInput,
    state_dim: usize,
    action_dim: usize,
    train_steps: u64,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        input: RewardInput,
        cfg: &RewardLearnerConfig,
        rng: &mut R,
    ) -> Self {
        let in_dim = match input {
            RewardInput::StateAction => state_dim + action_dim,
            RewardInput::StateOnly => state_dim,
        };
        let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
        let net = DenseNet::mlp(in_dim, &hidden, 1, cfg.activation, Activation::Identity, rng);
        Self {
            net,
            adam: AdamState::new(cfg.learning_rate),
            input,
            state_dim,
            action_dim,
            train_steps: 0,
        }
    }

    /// Wraps an existing network. Its input width must match `input`.
    pub fn from_net(
        net: DenseNet,
        state_dim: usize,
        action_dim: usize,
        input: RewardInput,
        learning_rate: f64,
    ) -> Result<Self, RewardError> {
        let expected = match input {
            RewardInput::StateAction => state_dim + action_dim,
            RewardInput::StateOnly => state_dim,
        };
        if net.input_dim() != expected || net.output_dim() != 1 {
            return Err(NnError::DimensionMismatch {
                expected,
                got: net.input_dim(),
            }
            .into());
        }
        Ok(Self {
            net,
            adam: AdamState::new(learning_rate),
            input,
            state_dim,
            action_dim,
            train_steps: 0,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn input(&self) -> RewardInput {
        self.input
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn input_row(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        match self.input {
            RewardInput::StateAction => {
                let mut row = Vec::with_capacity(s.len() + a.len());
                row.extend_from_slice(s);
                row.extend_from_slice(a);
                row
            }
            RewardInput::StateOnly => s.to_vec(),
        }
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        self.net
            .forward(&self.input_row(s, a))
            .expect("reward input width fixed at construction")[0]
    }

    pub fn rewards_for_inputs(&self, inputs: &Matrix) -> Vec<f64> {
        self.net
            .forward_batch(inputs)
            .expect("reward input width fixed at construction")
            .into_vec()
    }

    pub fn trajectory_inputs(&self, traj: &Trajectory) -> Matrix {
        let rows: Vec<Vec<f64>> = traj
            .states
            .iter()
            .zip(&traj.actions)
            .map(|(s, a)| self.input_row(s, a))
            .collect();
        Matrix::from_rows(&rows).expect("uniform trajectory shapes")
    }

    /// Per-step predicted rewards along a trajectory.
    pub fn step_rewards(&self, traj: &Trajectory) -> Vec<f64> {
        if traj.is_empty() {
            return Vec::new();
        }
        self.rewards_for_inputs(&self.trajectory_inputs(traj))
    }

    /// Sum of predicted per-step rewards over the whole trajectory.
    pub fn predicted_return(&self, traj: &Trajectory) -> Result<f64, RewardError> {
        if traj.is_empty() {
            return Err(RewardError::EmptyTrajectory);
        }
        Ok(self.step_rewards(traj).iter().sum())
    }

    pub fn preference_probability(&self, traj_i: &Trajectory, traj_j: &Trajectory) -> Result<f64, RewardError> {
        Ok(preference_probability(
            self.predicted_return(traj_i)?,
            self.predicted_return(traj_j)?,
        ))
    }

    /// Applies precomputed gradients with Adam.
    pub fn apply_gradients(&mut self, grads: &Gradients) -> Result<(), RewardError> {
        self.adam.step_net(&mut self.net, grads)?;
        self.train_steps += 1;
        Ok(())
    }
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the reward
/// network parameters.
pub fn pair_loss(model: &RewardModel, batch: &[SoftLabelPair]) -> Result<(f64, Gradients), RewardError> {
    if batch.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    if batch.iter().any(|p| p.traj_i.is_empty() || p.traj_j.is_empty()) {
        return Err(RewardError::EmptyTrajectory);
    }
    // Rows: τ_i of pair 0, τ_j of pair 0, τ_i of pair 1, ...
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut spans = Vec::with_capacity(batch.len() * 2);
    for p in batch {
        for t in [&p.traj_i, &p.traj_j] {
            let start = rows.len();
            rows.extend(t.states.iter().zip(&t.actions).map(|(s, a)| model.input_row(s, a)));
            spans.push(start..rows.len());
        }
    }
    let inputs = Matrix::from_rows(&rows)?;
    let cache = model.net.forward_cached(&inputs)?;
    let out = cache.output().as_slice();
    let returns: Vec<f64> = spans.iter().map(|r| out[r.clone()].iter().sum()).collect();

    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut upstream = Matrix::zeros(rows.len(), 1);
    for (k, p) in batch.iter().enumerate() {
        let diff = returns[2 * k + 1] - returns[2 * k];
        loss += p.mu_tilde * softplus(-diff) + (1.0 - p.mu_tilde) * softplus(diff);
        let g = (sigmoid(diff) - p.mu_tilde) * scale;
        for r in spans[2 * k].clone() {
            upstream.as_mut_slice()[r] -= g;
        }
        for r in spans[2 * k + 1].clone() {
            upstream.as_mut_slice()[r] += g;
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(RewardError::Diverged(loss));
    }
    let (grads, _) = model.net.backward(&cache, &upstream)?;
    Ok((loss, grads))
}

/// Runs `steps` Adam updates on freshly sampled pair batches from `scored`.
/// Returns `None` when fewer than two scored trajectories exist. The caller
/// relabels the replay buffer afterwards.
pub fn update_reward<R: Rng + ?Sized>(
    model: &mut RewardModel,
    scored: &ScoringBuffer,
    cfg: &RewardLearnerConfig,
    sampler: &PairSamplerConfig,
    steps: usize,
    rng: &mut R,
) -> Result<Option<Vec<RewardStepStats>>, RewardError> {
    if scored.len() < 2 {
        log::warn!("reward update skipped: {} scored trajectories", scored.len());
        return Ok(None);
    }
    let entries = scored.entries();
    let mut stats = Vec::with_capacity(steps);
    for _ in 0..steps {
        let pairs = sample_pairs(entries, sampler, cfg.batch_size, Some(&*model), rng)?;
        let batch: Vec<SoftLabelPair> = pairs
            .iter()
            .map(|&(i, j)| {
                SoftLabelPair::new(
                    cfg,
                    entries[i].trajectory.clone(),
                    entries[i].score(),
                    entries[j].trajectory.clone(),
                    entries[j].score(),
                )
            })
            .collect();
        let ties = batch.iter().filter(|p| p.mu == 0.5).count();
        let (loss, grads) = pair_loss(model, &batch)?;
        model.apply_gradients(&grads)?;
        stats.push(RewardStepStats {
            step: model.train_steps,
            loss,
            batch_tie_fraction: ties as f64 / batch.len() as f64,
            dataset_size: scored.len(),
        });
    }
    Ok(Some(stats))
}

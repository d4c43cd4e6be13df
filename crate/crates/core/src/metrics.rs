//! How well a learned reward tracks the ground truth, both per episode and
//! step by step.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffers::Trajectory;
use crate::envs::{EnvError, Environment};
use crate::nn::DenseNet;
use crate::reward::{RewardModel, RewardError};
use crate::sac::SacAgent;
use crate::teacher::{kendall_tau_b, TeacherError};
use crate::trainer::{derive_seed, rollout, PolicyCheckpoint, RunConfig, TrainerError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {needed} trajectories, got {got}")]
    TooFewTrajectories { needed: usize, got: usize },
    #[error("correlation undefined: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TeacherError> for MetricsError {
    fn from(e: TeacherError) -> Self {
        MetricsError::Degenerate(e.to_string())
    }
}

pub const MIN_CORRELATION_TRAJECTORIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `(true_return, predicted_return)` per trajectory.
    pub pairs: Vec<(f64, f64)>,
    pub pearson_r: f64,
    pub kendall_tau_b: f64,
    /// Least-squares coefficient through the origin over all aligned steps.
    pub scale: f64,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `c = Σ pred·true / Σ pred²`.
pub fn scale_through_origin(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| p * t).sum();
    let den: f64 = pred.iter().map(|p| p * p).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Episode-level agreement between `model` and the true returns. Does not
/// modify the model.
pub fn return_correlation(model: &RewardModel, trajectories: &[Trajectory]) -> Result<CorrelationReport, MetricsError> {
    if trajectories.len() < MIN_CORRELATION_TRAJECTORIES {
        return Err(MetricsError::TooFewTrajectories {
            needed: MIN_CORRELATION_TRAJECTORIES,
            got: trajectories.len(),
        });
    }
    let mut truth = Vec::with_capacity(trajectories.len());
    let mut pred = Vec::with_capacity(trajectories.len());
    let (mut step_pred, mut step_true) = (Vec::new(), Vec::new());
    for t in trajectories {
        let r = model.step_rewards(t);
        truth.push(t.true_return);
        pred.push(r.iter().sum());
        step_pred.extend(r);
        step_true.extend_from_slice(&t.true_rewards);
    }
    let pearson_r = pearson(&truth, &pred).ok_or_else(|| MetricsError::Degenerate("constant returns".into()))?;
    let tau = kendall_tau_b(&truth, &pred)?.tau_b;
    Ok(CorrelationReport {
        pairs: truth.into_iter().zip(pred).collect(),
        pearson_r,
        kendall_tau_b: tau,
        scale: scale_through_origin(&step_pred, &step_true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedStep {
    pub step: usize,
    pub true_reward: f64,
    pub scaled_pred: f64,
}

/// Per-step `(true, c·predicted)` series for one trajectory.
pub fn stepwise_alignment(model: &RewardModel, trajectory: &Trajectory, c: f64) -> Vec<AlignedStep> {
    model
        .step_rewards(trajectory)
        .into_iter()
        .zip(&trajectory.true_rewards)
        .enumerate()
        .map(|(step, (p, &t))| AlignedStep {
            step,
            true_reward: t,
            scaled_pred: c * p,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentError {
    /// Mean absolute error between true and aligned predicted step rewards.
    pub mae: f64,
    /// Standard deviation of the true step rewards.
    pub true_std: f64,
}

/// MAE after aligning predicted step rewards with scale `c` and an offset
/// fitted by least squares. A reward learned from rankings is only defined up
/// to a shift, so the offset is removed before comparing magnitudes.
pub fn aligned_step_error(model: &RewardModel, trajectories: &[Trajectory]) -> AlignmentError {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for t in trajectories {
        pred.extend(model.step_rewards(t));
        truth.extend_from_slice(&t.true_rewards);
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let centered_p: Vec<f64> = pred.iter().map(|p| p - mp).collect();
    let centered_t: Vec<f64> = truth.iter().map(|t| t - mt).collect();
    let c = scale_through_origin(&centered_p, &centered_t);
    let mae = centered_p.iter().zip(&centered_t).map(|(p, t)| (c * p - t).abs()).sum::<f64>() / n;
    let true_std = (centered_t.iter().map(|t| t * t).sum::<f64>() / n).sqrt();
    AlignmentError { mae, true_std }
}

/// Quality-spanning trajectory set: `per_checkpoint` stochastic-policy
/// episodes from each checkpoint.
pub fn checkpoint_trajectories(
    env: &Environment,
    template: &SacAgent,
    checkpoints: &[PolicyCheckpoint],
    per_checkpoint: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, MetricsError> {
    let mut out = Vec::with_capacity(checkpoints.len() * per_checkpoint);
    let mut agent = template.clone();
    for (ci, ck) in checkpoints.iter().enumerate() {
        agent
            .load_checkpoint(&ck.agent)
            .map_err(|e| MetricsError::Degenerate(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + ci as u64, 0));
        for k in 0..per_checkpoint {
            let reset = derive_seed(seed, 200 + ci as u64, k as u64);
            let id = (ci * per_checkpoint + k) as u64;
            out.push(rollout(env, reset, id, ck.episode, |s| agent.act(s, false, &mut rng))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub correlation: CorrelationReport,
    pub alignment: AlignmentError,
    pub trajectories: usize,
}

/// Reads a run directory, rebuilds the evaluation set from its checkpoints
/// and writes `correlation.json` and `alignment.csv` next to it.
pub fn analyze_run(dir: &Path) -> Result<AnalysisSummary, MetricsError> {
    let cfg = RunConfig::from_json(&fs::read_to_string(dir.join("config.json"))?)?;
    let kind = cfg.env_kind()?;
    let env = Environment::with_episode_length(kind, cfg.episode_length);
    let spec = env.spec().clone();
    let net = DenseNet::from_snapshot(&serde_json::from_str(&fs::read_to_string(dir.join("reward_model.json"))?)?)
        .map_err(RewardError::from)?;
    let model = RewardModel::from_net(net, spec.state_dim, spec.action_dim, cfg.reward.input, cfg.reward.learning_rate)?;

    let mut paths: Vec<_> = fs::read_dir(dir.join("checkpoints"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let checkpoints = paths
        .iter()
        .map(|p| Ok(serde_json::from_str::<PolicyCheckpoint>(&fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let template = SacAgent::new(
        spec.state_dim,
        &spec.action_bounds,
        cfg.sac.clone(),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let trajectories = checkpoint_trajectories(&env, &template, &checkpoints, 10, cfg.seed)?;
    let correlation = return_correlation(&model, &trajectories)?;
    let alignment = aligned_step_error(&model, &trajectories);

    fs::write(dir.join("correlation.json"), serde_json::to_string_pretty(&correlation)?)?;
    let mut csv = std::io::BufWriter::new(fs::File::create(dir.join("alignment.csv"))?);
    writeln!(csv, "trajectory,step,true,scaled_pred")?;
    for t in &trajectories {
        for s in stepwise_alignment(&model, t, correlation.scale) {
            writeln!(csv, "{},{},{},{}", t.id, s.step, s.true_reward, s.scaled_pred)?;
        }
    }
    csv.flush()?;
    Ok(AnalysisSummary {
        correlation,
        alignment,
        trajectories: trajectories.len(),
    })
}

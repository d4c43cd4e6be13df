//! Desk-scale continuous-control tasks with a hidden ground-truth reward.
//!
//! Both tasks move a damped 2D point mass inside the square `[-1, 1]²` with
//! explicit Euler integration. The observation is `[x, y, vx, vy, tx, ty]`
//! where `(tx, ty)` is the target (goal or button) position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.95;
pub const ARENA: f64 = 1.0;
pub const DEFAULT_EPISODE_LENGTH: usize = 100;

/// Consecutive in-region steps needed to count a SparseButton episode as a success.
pub const BUTTON_HOLD_STEPS: u32 = 10;
pub const BUTTON_RADIUS: f64 = 0.2;

const STATE_DIM: usize = 6;
const ACTION_DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeDone,
    #[error("action has {got} components, expected {expected}")]
    BadAction { expected: usize, got: usize },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    PointGoal,
    SparseButton,
}

impl EnvKind {
    pub fn from_name(name: &str) -> Result<Self, EnvError> {
        match name {
            "PointGoal" | "point_goal" => Ok(EnvKind::PointGoal),
            "SparseButton" | "sparse_button" => Ok(EnvKind::SparseButton),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointGoal => "PointGoal",
            EnvKind::SparseButton => "SparseButton",
        }
    }

    /// Sparse tasks are evaluated by success rate, dense ones by return.
    pub fn is_sparse(self) -> bool {
        matches!(self, EnvKind::SparseButton)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bounds: Vec<[f64; 2]>,
    pub episode_length: usize,
    /// `[G_min, G_max]`: every episode's true return lies in this range.
    pub return_bounds: [f64; 2],
}

impl EnvSpec {
    /// Maps a true return onto `[0, 1]` using the analytic bounds.
    pub fn normalized_return(&self, ret: f64) -> f64 {
        let [lo, hi] = self.return_bounds;
        ((ret - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: usize,
    pub done: bool,
    true_return: f64,
    hold_streak: u32,
    success: bool,
}

impl EnvState {
    pub fn position(&self) -> [f64; 2] {
        [self.observation[0], self.observation[1]]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.observation[4], self.observation[5]]
    }

    /// Ground-truth return accumulated so far. Reserved for the scripted
    /// teacher and for evaluation; the learner never reads it.
    pub fn true_return(&self) -> f64 {
        self.true_return
    }

    pub fn success(&self) -> bool {
        self.success
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub true_reward: f64,
    pub done: bool,
}

/// Static scene annotations shipped with render data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub kind: String,
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    kind: EnvKind,
    spec: EnvSpec,
}

impl Environment {
    pub fn new(kind: EnvKind) -> Self {
        Self::with_episode_length(kind, DEFAULT_EPISODE_LENGTH)
    }

    pub fn with_episode_length(kind: EnvKind, episode_length: usize) -> Self {
        let t = episode_length as f64;
        let return_bounds = match kind {
            // Distance never exceeds the arena diagonal.
            EnvKind::PointGoal => [-t * DT * 2.0 * ARENA * std::f64::consts::SQRT_2, 0.0],
            EnvKind::SparseButton => [0.0, t],
        };
        let spec = EnvSpec {
            name: kind.name().to_string(),
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            action_bounds: vec![[-1.0, 1.0]; ACTION_DIM],
            episode_length,
            return_bounds,
        };
        Self { kind, spec }
    }

    pub fn by_name(name: &str) -> Result<Self, EnvError> {
        EnvKind::from_name(name).map(Self::new)
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Spawn box of the agent and of the target, as `[lo, hi]` per axis.
    pub fn spawn_boxes(&self) -> ([f64; 2], [f64; 2]) {
        match self.kind {
            EnvKind::PointGoal => ([-0.5, 0.5], [-0.8, 0.8]),
            EnvKind::SparseButton => ([-0.5, 0.5], [-0.7, 0.7]),
        }
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (agent_box, target_box) = self.spawn_boxes();
        let px = rng.random_range(agent_box[0]..agent_box[1]);
        let py = rng.random_range(agent_box[0]..agent_box[1]);
        let tx = rng.random_range(target_box[0]..target_box[1]);
        let ty = rng.random_range(target_box[0]..target_box[1]);
        EnvState {
            observation: vec![px, py, 0.0, 0.0, tx, ty],
            step_index: 0,
            done: false,
            true_return: 0.0,
            hold_streak: 0,
            success: false,
        }
    }

    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != ACTION_DIM {
            return Err(EnvError::BadAction {
                expected: ACTION_DIM,
                got: action.len(),
            });
        }
        let o = &state.observation;
        let mut next = state.clone();
        for axis in 0..2 {
            let [lo, hi] = self.spec.action_bounds[axis];
            let a = if action[axis].is_finite() {
                action[axis].clamp(lo, hi)
            } else {
                0.0
            };
            let mut v = DAMPING * o[2 + axis] + a * DT;
            let mut p = o[axis] + v * DT;
            if p.abs() > ARENA {
                p = p.clamp(-ARENA, ARENA);
                v = 0.0;
            }
            next.observation[axis] = p;
            next.observation[2 + axis] = v;
        }
        let dist = distance(next.position(), next.target());
        let reward = match self.kind {
            EnvKind::PointGoal => -dist * DT,
            EnvKind::SparseButton => {
                if dist <= BUTTON_RADIUS {
                    next.hold_streak += 1;
                    if next.hold_streak >= BUTTON_HOLD_STEPS {
                        next.success = true;
                    }
                    1.0
                } else {
                    next.hold_streak = 0;
                    0.0
                }
            }
        };
        next.step_index += 1;
        next.true_return += reward;
        next.done = next.step_index >= self.spec.episode_length;
        let done = next.done;
        Ok(StepOutcome {
            state: next,
            true_reward: reward,
            done,
        })
    }

    /// Deterministic PD controller steering toward the target.
    pub fn expert_action(&self, state: &EnvState) -> Vec<f64> {
        self.expert_policy(&state.observation)
    }

    /// [`Environment::expert_action`] from a bare observation.
    pub fn expert_policy(&self, o: &[f64]) -> Vec<f64> {
        const KP: f64 = 10.0;
        const KD: f64 = 6.0;
        (0..2)
            .map(|axis| (KP * (o[4 + axis] - o[axis]) - KD * o[2 + axis]).clamp(-1.0, 1.0))
            .collect()
    }

    pub fn annotations(&self, state: &EnvState) -> Vec<SceneAnnotation> {
        let (kind, radius) = match self.kind {
            EnvKind::PointGoal => ("goal", 0.05),
            EnvKind::SparseButton => ("button", BUTTON_RADIUS),
        };
        vec![SceneAnnotation {
            kind: kind.to_string(),
            center: state.target(),
            radius,
        }]
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

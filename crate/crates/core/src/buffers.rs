//! Transition replay buffer for the policy learner and the scoring buffer of
//! teacher-scored trajectories for the reward learner.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::SceneAnnotation;
use crate::nn::Matrix;
use crate::reward::RewardModel;

pub type TrajectoryId = u64;

pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("score {score} outside scoring range [{lo}, {hi}]")]
    ScoreOutOfRange { score: f64, lo: f64, hi: f64 },
    #[error("unknown trajectory {0}")]
    UnknownTrajectory(TrajectoryId),
    #[error("trajectory {0} is already in the scoring buffer")]
    DuplicateTrajectory(TrajectoryId),
}

/// One full episode as collected by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: TrajectoryId,
    /// Episode index that produced this trajectory.
    pub episode: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Hidden per-step ground-truth reward; teacher and metrics only.
    pub true_rewards: Vec<f64>,
    pub true_return: f64,
    pub success: bool,
    /// Agent position before the first step and after every step.
    pub positions: Vec<[f64; 2]>,
    pub annotations: Vec<SceneAnnotation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r_hat: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub trajectory_id: TrajectoryId,
}

/// FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = if self.items.len() < self.capacity {
            (&self.items[..], &self.items[..0])
        } else {
            let (a, b) = self.items.split_at(self.cursor);
            (a, b)
        };
        older.iter().chain(newer.iter())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    /// `n` uniform draws with replacement, returned as storage indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, BufferError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if self.items.is_empty() {
            return Err(BufferError::Empty);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, BufferError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Recomputes every stored `r_hat` with `model`. Returns the number of
    /// transitions touched.
    pub fn relabel_all(&mut self, model: &RewardModel) -> usize {
        const CHUNK: usize = 4096;
        for chunk in self.items.chunks_mut(CHUNK) {
            let inputs: Vec<Vec<f64>> = chunk.iter().map(|t| model.input_row(&t.s, &t.a)).collect();
            let inputs = Matrix::from_rows(&inputs).expect("uniform transition shapes");
            let rewards = model.rewards_for_inputs(&inputs);
            for (t, r) in chunk.iter_mut().zip(rewards) {
                t.r_hat = r;
            }
        }
        self.items.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvent {
    /// Logical time of the event (training episode index).
    pub tick: u64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct ScoredTrajectory {
    pub trajectory: Arc<Trajectory>,
    score: f64,
    score_history: Vec<ScoreEvent>,
}

impl ScoredTrajectory {
    pub fn id(&self) -> TrajectoryId {
        self.trajectory.id
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn score_history(&self) -> &[ScoreEvent] {
        &self.score_history
    }
}

#[derive(Debug, Serialize)]
struct ExportLine<'a> {
    id: TrajectoryId,
    episode: usize,
    score: Option<f64>,
    score_history: &'a [ScoreEvent],
    steps: usize,
    skipped: bool,
}

/// Append-and-revise store of every scored trajectory. Nothing is evicted.
#[derive(Debug, Clone)]
pub struct ScoringBuffer {
    range: (f64, f64),
    entries: Vec<ScoredTrajectory>,
    index: HashMap<TrajectoryId, usize>,
    skipped: Vec<Arc<Trajectory>>,
}

impl ScoringBuffer {
    pub fn new(range: (f64, f64)) -> Self {
        Self {
            range,
            entries: Vec::new(),
            index: HashMap::new(),
            skipped: Vec::new(),
        }
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ScoredTrajectory] {
        &self.entries
    }

    pub fn get(&self, id: TrajectoryId) -> Option<&ScoredTrajectory> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: TrajectoryId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn skipped(&self) -> &[Arc<Trajectory>] {
        &self.skipped
    }

    fn check_range(&self, score: f64) -> Result<(), BufferError> {
        let (lo, hi) = self.range;
        if !(score.is_finite() && score >= lo && score <= hi) {
            return Err(BufferError::ScoreOutOfRange { score, lo, hi });
        }
        Ok(())
    }

    pub fn add_scored(&mut self, trajectory: Arc<Trajectory>, score: f64, tick: u64) -> Result<(), BufferError> {
        self.check_range(score)?;
        let id = trajectory.id;
        if self.index.contains_key(&id) {
            return Err(BufferError::DuplicateTrajectory(id));
        }
        self.index.insert(id, self.entries.len());
        self.entries.push(ScoredTrajectory {
            trajectory,
            score,
            score_history: vec![ScoreEvent { tick, score }],
        });
        Ok(())
    }

    pub fn revise_score(&mut self, id: TrajectoryId, score: f64, tick: u64) -> Result<(), BufferError> {
        self.check_range(score)?;
        let &i = self.index.get(&id).ok_or(BufferError::UnknownTrajectory(id))?;
        let e = &mut self.entries[i];
        e.score = score;
        e.score_history.push(ScoreEvent { tick, score });
        Ok(())
    }

    /// Records a trajectory the teacher declined to score. It never enters
    /// the training set.
    pub fn mark_skipped(&mut self, trajectory: Arc<Trajectory>) {
        self.skipped.push(trajectory);
    }

    /// One JSON object per line: scored entries first, then skipped ones.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            let line = ExportLine {
                id: e.id(),
                episode: e.trajectory.episode,
                score: Some(e.score),
                score_history: &e.score_history,
                steps: e.trajectory.len(),
                skipped: false,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        for t in &self.skipped {
            let line = ExportLine {
                id: t.id,
                episode: t.episode,
                score: None,
                score_history: &[],
                steps: t.len(),
                skipped: true,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn dummy_trajectory(id: TrajectoryId, len: usize) -> Trajectory {
        Trajectory {
            id,
            episode: id as usize,
            states: (0..len).map(|t| vec![t as f64 * 0.1, id as f64 * 0.01, 0.0, 0.0, 0.5, 0.5]).collect(),
            actions: (0..len).map(|t| vec![(t as f64).sin(), 0.2]).collect(),
            true_rewards: vec![0.0; len],
            true_return: 0.0,
            success: false,
            positions: vec![[0.0, 0.0]; len + 1],
            annotations: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::dummy_trajectory;
    use super::*;
    use crate::reward::{RewardInput, RewardLearnerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(k: usize) -> Transition {
        Transition {
            s: vec![k as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
            a: vec![0.0, 0.0],
            r_hat: 0.0,
            s_next: vec![0.0; 6],
            done: false,
            trajectory_id: k as u64,
        }
    }

    #[test]
    fn push_into_empty() {
        let mut b = ReplayBuffer::new(4);
        b.push(transition(0));
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn ring_evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..4 {
            b.push(transition(k));
        }
        assert_eq!(b.len(), 3);
        let ids: Vec<u64> = b.iter().map(|t| t.trajectory_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        b.push(transition(4));
        let ids: Vec<u64> = b.iter().map(|t| t.trajectory_id).collect();
        assert_eq!(ids, vec![2, 3, 4]);
    }

    #[test]
    fn every_item_is_eventually_sampled() {
        let mut b = ReplayBuffer::new(5);
        for k in 0..5 {
            b.push(transition(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 5];
        for t in b.sample(200, &mut rng).unwrap() {
            seen[t.trajectory_id as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sample_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(5);
        assert_eq!(b.sample(3, &mut rng).unwrap_err(), BufferError::Empty);
        assert!(b.sample(0, &mut rng).unwrap().is_empty());
        b.push(transition(9));
        let s = b.sample(3, &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|t| t.trajectory_id == 9));
    }

    #[test]
    fn sampling_is_uniform_chi_squared() {
        let mut b = ReplayBuffer::new(10);
        for k in 0..10 {
            b.push(transition(k));
        }
        let n = 100_000;
        let expected = n as f64 / 10.0;
        // 99th percentile of χ² with 9 degrees of freedom; with 20 seeds,
        // more than two exceedances has probability below 0.1%.
        let exceed = (0..20)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut counts = [0usize; 10];
                for i in b.sample_indices(n, &mut rng).unwrap() {
                    counts[i] += 1;
                }
                let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
                chi2 >= 21.666
            })
            .count();
        assert!(exceed <= 2, "{exceed} of 20 seeds exceed the 99th percentile");
    }

    fn model(seed: u64) -> RewardModel {
        let cfg = RewardLearnerConfig {
            hidden_units: 8,
            hidden_layers: 2,
            ..RewardLearnerConfig::default()
        };
        RewardModel::new(6, 2, RewardInput::StateAction, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn relabel_is_exact_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = ReplayBuffer::new(64);
        for k in 0..50 {
            let mut t = transition(k);
            t.s = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            t.a = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.push(t);
        }
        let net = model(1);
        assert_eq!(b.relabel_all(&net), 50);
        for t in b.iter() {
            assert_eq!(t.r_hat.to_bits(), net.reward(&t.s, &t.a).to_bits());
        }
        let before: Vec<f64> = b.iter().map(|t| t.r_hat).collect();
        b.relabel_all(&net);
        let after: Vec<f64> = b.iter().map(|t| t.r_hat).collect();
        assert_eq!(before, after);

        let other = model(2);
        b.relabel_all(&other);
        let changed = b.iter().zip(&before).filter(|(t, &r)| t.r_hat != r).count();
        assert!(changed > 0);
    }

    #[test]
    fn scoring_buffer_add_and_revise() {
        let mut d = ScoringBuffer::new((0.0, 10.0));
        d.add_scored(Arc::new(dummy_trajectory(1, 3)), 7.5, 0).unwrap();
        d.revise_score(1, 6.0, 4).unwrap();
        let e = d.get(1).unwrap();
        assert_eq!(e.score(), 6.0);
        assert_eq!(e.score_history().len(), 2);
        assert_eq!(e.score_history().last().unwrap().score, e.score());
        assert_eq!(d.revise_score(99, 1.0, 5), Err(BufferError::UnknownTrajectory(99)));
        assert!(matches!(
            d.add_scored(Arc::new(dummy_trajectory(2, 3)), 10.5, 0),
            Err(BufferError::ScoreOutOfRange { .. })
        ));
        assert_eq!(
            d.add_scored(Arc::new(dummy_trajectory(1, 3)), 1.0, 0),
            Err(BufferError::DuplicateTrajectory(1))
        );
    }

    #[test]
    fn half_step_scores_stored_exactly() {
        let mut d = ScoringBuffer::new((0.0, 10.0));
        for (k, s) in (0..=20).map(|k| k as f64 * 0.5).enumerate() {
            d.add_scored(Arc::new(dummy_trajectory(k as u64, 2)), s, 0).unwrap();
            assert_eq!(d.get(k as u64).unwrap().score(), s);
        }
    }

    #[test]
    fn export_has_one_line_per_trajectory() {
        let mut d = ScoringBuffer::new((0.0, 10.0));
        d.add_scored(Arc::new(dummy_trajectory(1, 3)), 4.0, 0).unwrap();
        d.revise_score(1, 5.0, 1).unwrap();
        d.mark_skipped(Arc::new(dummy_trajectory(2, 3)));
        let mut buf = Vec::new();
        d.export_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["score"], 5.0);
        assert_eq!(lines[0]["score_history"].as_array().unwrap().len(), 2);
        assert_eq!(lines[0]["steps"], 3);
        assert_eq!(lines[1]["skipped"], true);
        assert_eq!(d.len(), 1);
    }
}

//! Query selection for the teacher and pair sampling from the scoring buffer.

use std::collections::HashMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffers::{ScoredTrajectory, Trajectory, TrajectoryId};
use crate::reward::{binary_entropy, preference_probability, RewardModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("need at least two scored trajectories, have {0}")]
    TooFewTrajectories(usize),
    #[error("number of queries must be positive")]
    ZeroQueries,
    #[error("no candidate trajectories")]
    NoCandidates,
    #[error("entropy sampling requires a reward model")]
    MissingRewardModel,
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScheme {
    Uniform,
    Entropy,
    Priority,
}

impl PairScheme {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(PairScheme::Uniform),
            "entropy" => Some(PairScheme::Entropy),
            "priority" => Some(PairScheme::Priority),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairScheme::Uniform => "uniform",
            PairScheme::Entropy => "entropy",
            PairScheme::Priority => "priority",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSamplerConfig {
    pub scheme: PairScheme,
    /// Exponent applied to scores in priority sampling.
    pub beta: f64,
    /// Entropy sampling draws this many times the requested pairs before
    /// keeping the most uncertain ones.
    pub entropy_pool_multiplier: usize,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        Self {
            scheme: PairScheme::Priority,
            beta: 3.0,
            entropy_pool_multiplier: 10,
        }
    }
}

impl PairSamplerConfig {
    pub fn validate(&self, scoring_range: (f64, f64)) -> Result<(), SamplingError> {
        if !(self.beta > 0.0) {
            return Err(SamplingError::InvalidConfig("beta must be positive".into()));
        }
        if self.entropy_pool_multiplier == 0 {
            return Err(SamplingError::InvalidConfig(
                "entropy_pool_multiplier must be positive".into(),
            ));
        }
        if self.scheme == PairScheme::Priority && scoring_range.0 < 0.0 {
            return Err(SamplingError::InvalidConfig(
                "priority sampling needs a non-negative scoring range".into(),
            ));
        }
        Ok(())
    }
}

/// `P(i) = s_i^β / Σ_k s_k^β`; uniform when every score is zero.
pub fn priority_distribution(scores: &[f64], beta: f64) -> Vec<f64> {
    let weights: Vec<f64> = scores.iter().map(|s| s.max(0.0).powf(beta)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

fn uniform_partner<R: Rng + ?Sized>(n: usize, exclude: usize, rng: &mut R) -> usize {
    let r = rng.random_range(0..n - 1);
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

fn uniform_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.random_range(0..n);
    (i, uniform_partner(n, i, rng))
}

/// Draws `m` index pairs into `entries`, never pairing an entry with itself.
///
/// Priority pairs put the score-weighted draw in the first slot and a
/// uniform partner in the second.
pub fn sample_pairs<R: Rng + ?Sized>(
    entries: &[ScoredTrajectory],
    cfg: &PairSamplerConfig,
    m: usize,
    model: Option<&RewardModel>,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, SamplingError> {
    let n = entries.len();
    if n < 2 {
        return Err(SamplingError::TooFewTrajectories(n));
    }
    match cfg.scheme {
        PairScheme::Uniform => Ok((0..m).map(|_| uniform_pair(n, rng)).collect()),
        PairScheme::Priority => {
            let scores: Vec<f64> = entries.iter().map(ScoredTrajectory::score).collect();
            let probs = priority_distribution(&scores, cfg.beta);
            let dist = WeightedIndex::new(&probs)
                .map_err(|e| SamplingError::InvalidConfig(format!("priority weights: {e}")))?;
            Ok((0..m)
                .map(|_| {
                    let i = dist.sample(rng);
                    (i, uniform_partner(n, i, rng))
                })
                .collect())
        }
        PairScheme::Entropy => {
            let model = model.ok_or(SamplingError::MissingRewardModel)?;
            let pool: Vec<(usize, usize)> = (0..m * cfg.entropy_pool_multiplier)
                .map(|_| uniform_pair(n, rng))
                .collect();
            let mut returns: HashMap<usize, f64> = HashMap::new();
            for &(i, j) in &pool {
                for k in [i, j] {
                    if let std::collections::hash_map::Entry::Vacant(v) = returns.entry(k) {
                        let r = model
                            .predicted_return(&entries[k].trajectory)
                            .map_err(|_| SamplingError::EmptyTrajectory)?;
                        v.insert(r);
                    }
                }
            }
            Ok(most_uncertain(&pool, |k| returns[&k], m))
        }
    }
}

/// Keeps the `m` pairs whose predicted preference has the highest entropy.
/// Ties keep pool order.
pub fn most_uncertain<F: Fn(usize) -> f64>(pool: &[(usize, usize)], predicted_return: F, m: usize) -> Vec<(usize, usize)> {
    let mut scored: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let p = preference_probability(predicted_return(i), predicted_return(j));
            (binary_entropy(p), k)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(m).map(|(_, k)| pool[k]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub candidates: Vec<TrajectoryId>,
    pub selected: Vec<TrajectoryId>,
    pub centroid_returns: Vec<f64>,
}

/// One-dimensional k-means with k-means++ seeding. Centroids come back sorted.
pub fn kmeans_1d<R: Rng + ?Sized>(values: &[f64], k: usize, max_iter: usize, rng: &mut R) -> Vec<f64> {
    let n = values.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.random_range(0..n)]);
    while centroids.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                centroids
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&d2).expect("positive total").sample(rng)
        } else {
            rng.random_range(0..n)
        };
        centroids.push(values[next]);
    }

    let nearest = |v: f64, cs: &[f64]| -> usize {
        let mut best = 0;
        for (c, &cv) in cs.iter().enumerate() {
            if (v - cv).abs() < (v - cs[best]).abs() {
                best = c;
            }
        }
        best
    };
    let mut assignment: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&v, &a) in values.iter().zip(&assignment) {
            sums[a] += v;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    centroids.sort_by(f64::total_cmp);
    centroids
}

/// Picks `j` distinct candidates whose returns sit closest to the k-means
/// centroids of all candidate returns. Candidate order does not matter.
pub fn select_queries(candidates: &[(TrajectoryId, f64)], j: usize, seed: u64) -> Result<QuerySelection, SamplingError> {
    if j == 0 {
        return Err(SamplingError::ZeroQueries);
    }
    if candidates.is_empty() {
        return Err(SamplingError::NoCandidates);
    }
    let mut canonical = candidates.to_vec();
    canonical.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let ids: Vec<TrajectoryId> = canonical.iter().map(|c| c.0).collect();
    if j >= canonical.len() {
        return Ok(QuerySelection {
            candidates: ids.clone(),
            selected: ids,
            centroid_returns: canonical.iter().map(|c| c.1).collect(),
        });
    }
    let returns: Vec<f64> = canonical.iter().map(|c| c.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = kmeans_1d(&returns, j, 50, &mut rng);
    let mut taken = vec![false; canonical.len()];
    let mut selected = Vec::with_capacity(j);
    for &c in &centroids {
        let best = (0..canonical.len())
            .filter(|&k| !taken[k])
            .min_by(|&a, &b| (returns[a] - c).abs().total_cmp(&(returns[b] - c).abs()))
            .expect("j < number of candidates");
        taken[best] = true;
        selected.push(ids[best]);
    }
    Ok(QuerySelection {
        candidates: ids,
        selected,
        centroid_returns: centroids,
    })
}

/// [`select_queries`] on returns predicted by the current reward model.
pub fn select_queries_kmeans(
    model: &RewardModel,
    candidates: &[Arc<Trajectory>],
    j: usize,
    seed: u64,
) -> Result<QuerySelection, SamplingError> {
    let with_returns = candidates
        .iter()
        .map(|t| {
            model
                .predicted_return(t)
                .map(|r| (t.id, r))
                .map_err(|_| SamplingError::EmptyTrajectory)
        })
        .collect::<Result<Vec<_>, _>>()?;
    select_queries(&with_returns, j, seed)
}

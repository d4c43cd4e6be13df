//! Scripted teacher and rank-correlation diagnostics.
//!
//! The scripted teacher maps a trajectory's true return linearly onto the
//! scoring range. A noisy teacher perturbs that score with Gaussian noise,
//! clips it back into range and snaps it to the quantization grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeacherError {
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("rank correlation undefined: one sequence is constant")]
    Undefined,
    #[error("invalid teacher config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub scoring_range: (f64, f64),
    pub noise_variance: f64,
    pub quantization_step: f64,
    /// `[G_min, G_max]` of the environment being scored.
    pub return_bounds: [f64; 2],
}

impl TeacherConfig {
    pub fn new(scoring_range: (f64, f64), return_bounds: [f64; 2]) -> Self {
        Self {
            scoring_range,
            noise_variance: 0.0,
            quantization_step: 0.5,
            return_bounds,
        }
    }

    pub fn with_noise(mut self, variance: f64) -> Self {
        self.noise_variance = variance;
        self
    }

    pub fn validate(&self) -> Result<(), TeacherError> {
        let (lo, hi) = self.scoring_range;
        if !(lo < hi) {
            return Err(TeacherError::InvalidConfig("scoring range must satisfy lo < hi".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(TeacherError::InvalidConfig("noise variance must be non-negative".into()));
        }
        if !(self.quantization_step > 0.0) {
            return Err(TeacherError::InvalidConfig("quantization step must be positive".into()));
        }
        let steps = (hi - lo) / self.quantization_step;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(TeacherError::InvalidConfig(
                "scoring range must be a whole number of quantization steps".into(),
            ));
        }
        if !(self.return_bounds[0] < self.return_bounds[1]) {
            return Err(TeacherError::InvalidConfig("return bounds must satisfy G_min < G_max".into()));
        }
        Ok(())
    }

    /// Nearest grid point `lo + k·step`.
    pub fn quantize(&self, score: f64) -> f64 {
        let (lo, _) = self.scoring_range;
        let k = ((score - lo) / self.quantization_step).round();
        lo + k * self.quantization_step
    }
}

/// Linear map of the true return onto the scoring range, clipped at the ends.
pub fn perfect_score(cfg: &TeacherConfig, true_return: f64) -> f64 {
    let (lo, hi) = cfg.scoring_range;
    let [g_min, g_max] = cfg.return_bounds;
    let frac = ((true_return - g_min) / (g_max - g_min)).clamp(0.0, 1.0);
    lo + (hi - lo) * frac
}

/// Gaussian-perturbed score, clipped to range then quantized.
pub fn noisy_score<R: Rng + ?Sized>(cfg: &TeacherConfig, true_return: f64, rng: &mut R) -> f64 {
    let base = perfect_score(cfg, true_return);
    let noisy = if cfg.noise_variance > 0.0 {
        Normal::new(base, cfg.noise_variance.sqrt())
            .expect("finite mean and positive std")
            .sample(rng)
    } else {
        base
    };
    let (lo, hi) = cfg.scoring_range;
    cfg.quantize(noisy.clamp(lo, hi))
}

/// A simulated teacher owning its own random stream.
#[derive(Debug, Clone)]
pub struct ScriptedTeacher {
    cfg: TeacherConfig,
    rng: ChaCha8Rng,
}

impl ScriptedTeacher {
    pub fn new(cfg: TeacherConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.cfg
    }

    /// Noiseless teachers emit the exact linear score; noisy ones draw fresh
    /// noise on every call.
    pub fn score(&mut self, true_return: f64) -> f64 {
        if self.cfg.noise_variance > 0.0 {
            noisy_score(&self.cfg, true_return, &mut self.rng)
        } else {
            perfect_score(&self.cfg, true_return)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    /// Concordant pairs.
    pub p: u64,
    /// Discordant pairs.
    pub q: u64,
    /// Pairs tied only in the first sequence.
    pub t: u64,
    /// Pairs tied only in the second sequence.
    pub u: u64,
    pub tau_b: f64,
}

/// Kendall's τ_B by exhaustive pair counting.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<RankCorrelation, TeacherError> {
    if xs.len() != ys.len() {
        return Err(TeacherError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(TeacherError::TooShort(xs.len()));
    }
    let (mut p, mut q, mut t, mut u) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let dx = xs[i].total_cmp(&xs[j]);
            let dy = ys[i].total_cmp(&ys[j]);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => t += 1,
                (_, Equal) => u += 1,
                (a, b) if a == b => p += 1,
                _ => q += 1,
            }
        }
    }
    let denom = (((p + q + t) as f64) * ((p + q + u) as f64)).sqrt();
    if denom == 0.0 {
        return Err(TeacherError::Undefined);
    }
    Ok(RankCorrelation {
        p,
        q,
        t,
        u,
        tau_b: (p as f64 - q as f64) / denom,
    })
}

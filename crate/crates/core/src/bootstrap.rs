//! Multiplier bootstrap for the supremum of the limiting process.
//!
//! Replicate `r` draws its multipliers from a stream keyed by
//! `(seed, r)`, so results do not depend on worker count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluenceMatrix;
use crate::seed::{derive_seed, Stream};

/// Mean-zero, unit-variance multiplier laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierDistribution {
    StandardNormal,
    Rademacher,
    /// Two-point law at `(1 ∓ √5)/2`.
    Mammen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSpec {
    pub distribution: MultiplierDistribution,
    pub reps: usize,
    pub seed: u64,
}

impl Default for MultiplierSpec {
    fn default() -> Self {
        MultiplierSpec {
            distribution: MultiplierDistribution::StandardNormal,
            reps: 1000,
            seed: 0,
        }
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;
pub(crate) const MAMMEN_LOW: f64 = (1.0 - SQRT5) / 2.0;
pub(crate) const MAMMEN_HIGH: f64 = (1.0 + SQRT5) / 2.0;
pub(crate) const MAMMEN_P_LOW: f64 = (SQRT5 + 1.0) / (2.0 * SQRT5);

/// The `n` multipliers of replicate `rep_index`.
pub fn draw_multipliers(n: usize, spec: &MultiplierSpec, rep_index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, Stream::Multipliers, rep_index as u64));
    match spec.distribution {
        MultiplierDistribution::StandardNormal => {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        }
        MultiplierDistribution::Rademacher => (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        MultiplierDistribution::Mammen => (0..n)
            .map(|_| {
                if rng.random::<f64>() < MAMMEN_P_LOW {
                    MAMMEN_LOW
                } else {
                    MAMMEN_HIGH
                }
            })
            .collect(),
    }
}

/// Simulated suprema, indexed by replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub sup_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl BootstrapDraws {
    pub fn len(&self) -> usize {
        self.sup_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sup_values.is_empty()
    }

    pub fn summary(&self) -> DrawSummary {
        let m = self.sup_values.len() as f64;
        let mean = self.sup_values.iter().sum::<f64>() / m;
        let var = self
            .sup_values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (m - 1.0).max(1.0);
        DrawSummary {
            mean,
            sd: var.sqrt(),
            min: self.sup_values.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.sup_values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Runs `spec.reps` multiplier replicates over `influence`.
pub fn bootstrap(influence: &InfluenceMatrix, spec: &MultiplierSpec) -> Result<BootstrapDraws> {
    if spec.reps == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
    }
    let n = influence.n_rows();
    let sup_values = (0..spec.reps)
        .into_par_iter()
        .map(|r| influence.simulate_sup(&draw_multipliers(n, spec, r)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BootstrapDraws { sup_values })
}

/// Order statistic of rank `⌈(1 − α)·m⌉` among the `m` draws.
pub fn critical_value(draws: &BootstrapDraws, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = draws.len();
    let mut sorted = draws.sup_values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[critical_rank(alpha, m) - 1])
}

/// `⌈(1 − α)·m⌉`, clamped to `[1, m]`; tolerant of `(1 − α)·m` landing a hair
/// above an integer through rounding.
fn critical_rank(alpha: f64, m: usize) -> usize {
    let target = (1.0 - alpha) * m as f64;
    let rank = (target - 1e-9 * target.max(1.0)).ceil() as usize;
    rank.clamp(1, m)
}

/// Share of draws at or above `statistic`.
pub fn p_value(draws: &BootstrapDraws, statistic: f64) -> f64 {
    if draws.is_empty() {
        return 1.0;
    }
    let hits = draws.sup_values.iter().filter(|&&v| v >= statistic).count();
    hits as f64 / draws.len() as f64
}

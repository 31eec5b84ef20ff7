//! Gaussian kernel, Silverman bandwidths, and Nadaraya–Watson style
//! estimators over a scalar covariate.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Weight sums below this are treated as zero.
pub const WEIGHT_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth_rule: BandwidthRule,
    /// Multiplier applied to the selected bandwidth; below 1 undersmooths.
    pub bandwidth_scale: f64,
    /// Separate bandwidth for the covariate density `q̂`; shares `h` when absent.
    pub q_bandwidth: Option<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth_rule: BandwidthRule::Silverman,
            bandwidth_scale: 1.0,
            q_bandwidth: None,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth scale must be positive, got {}",
                self.bandwidth_scale
            )));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth_rule {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "fixed bandwidth must be positive, got {h}"
                )));
            }
        }
        if let Some(h) = self.q_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "q bandwidth must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Bandwidth for smoothing over `sample`.
    pub fn bandwidth(&self, sample: &[f64]) -> Result<f64> {
        self.validate()?;
        let base = match self.bandwidth_rule {
            BandwidthRule::Silverman => silverman_bandwidth(sample)?,
            BandwidthRule::Fixed(h) => h,
        };
        Ok(base * self.bandwidth_scale)
    }

    /// Bandwidth for `q̂`, given the regression bandwidth `h`.
    pub fn density_bandwidth(&self, h: f64) -> f64 {
        self.q_bandwidth.unwrap_or(h)
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn kernel_weight(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// `1.06 · min(sd, IQR/1.34) · n^(-1/5)`, falling back to `sd` when the IQR is zero.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::DegenerateBandwidth);
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(silverman_rule(spread, n))
}

pub(crate) fn silverman_rule(spread: f64, n: usize) -> f64 {
    1.06 * spread * (n as f64).powf(-0.2)
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Columns of a continuous-covariate dataset needed by the kernel estimators.
#[derive(Debug, Clone)]
pub struct KernelData {
    pub x: Vec<f64>,
    pub z: Vec<u8>,
}

impl KernelData {
    pub fn from_dataset(dataset: &Dataset) -> Result<KernelData> {
        let x = dataset.scalar_covariate().ok_or_else(|| {
            Error::UnsupportedCovariateMix("kernel estimators need one continuous covariate".into())
        })?;
        Ok(KernelData {
            x,
            z: dataset.instruments(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Leave-one-out Nadaraya–Watson mean of `values` at `X_i` over arm `arm`.
    pub fn loo_nw_mean(&self, values: &[f64], i: usize, arm: u8, h: f64) -> Result<f64> {
        let xi = self.x[i];
        let mut num = 0.0;
        let mut den = 0.0;
        let mut any = false;
        for j in 0..self.len() {
            if j == i || self.z[j] != arm {
                continue;
            }
            any = true;
            let k = kernel_weight((self.x[j] - xi) / h);
            num += k * values[j];
            den += k;
        }
        if !any || den < WEIGHT_UNDERFLOW {
            return Err(Error::EmptyArm { index: i, arm });
        }
        Ok(num / den)
    }

    /// Leave-one-out estimate of `q(X_i, arm) = f(X_i | Z = arm) · P(Z = arm)`.
    pub fn loo_density(&self, i: usize, arm: u8, h: f64) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let xi = self.x[i];
        let sum: f64 = (0..n)
            .filter(|&j| j != i && self.z[j] == arm)
            .map(|j| kernel_weight((self.x[j] - xi) / h))
            .sum();
        sum / ((n - 1) as f64 * h)
    }

    /// Plug-in Nadaraya–Watson mean of `values` at `x`, optionally restricted to one arm.
    pub fn nw_at_point(&self, values: &[f64], x: f64, arm: Option<u8>, h: f64) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.len() {
            if arm.is_some_and(|a| a != self.z[j]) {
                continue;
            }
            let k = kernel_weight((self.x[j] - x) / h);
            num += k * values[j];
            den += k;
        }
        if den < WEIGHT_UNDERFLOW {
            return Err(Error::ZeroWeightSum);
        }
        Ok(num / den)
    }
}

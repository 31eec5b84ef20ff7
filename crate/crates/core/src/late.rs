//! First-stage estimates of the conditional LATE `δ(x)` and the transformed
//! outcome `Ŵ = Y + (1 − D)·δ̂(X)`.
//!
//! Outcomes are centred on the first record's `Y` before averaging, so a
//! location shift of `Y` that is exact in floating point leaves `δ̂`
//! bit-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CellIndex, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{kernel_weight, KernelData, KernelSpec, WEIGHT_UNDERFLOW};

pub const DEFAULT_RELEVANCE_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub key: Vec<f64>,
    pub delta: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub p0: f64,
    pub p1: f64,
    /// Record counts in arms z = 0 and z = 1.
    pub counts: [usize; 2],
}

/// `δ̂(x)` for every discrete covariate cell, ordered by cell key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub cells: Vec<DeltaCell>,
}

impl DeltaTable {
    pub fn get(&self, key: &[f64]) -> Option<&DeltaCell> {
        self.cells
            .binary_search_by(|c| {
                c.key
                    .iter()
                    .zip(key)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(c.key.len().cmp(&key.len()))
            })
            .ok()
            .map(|i| &self.cells[i])
    }
}

/// `δ̂(X_i)` for every record of a continuous-covariate sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSeries {
    pub values: Vec<f64>,
    /// Bandwidth used for the leave-one-out regressions.
    pub bandwidth: f64,
}

/// Anything that can supply `δ̂(X_i)` for a record.
pub trait DeltaSource {
    fn delta_for(&self, dataset: &Dataset, i: usize) -> Result<f64>;
}

impl DeltaSource for DeltaTable {
    fn delta_for(&self, dataset: &Dataset, i: usize) -> Result<f64> {
        let key = &dataset.record(i).x;
        self.get(key)
            .map(|c| c.delta)
            .ok_or_else(|| Error::MissingCell(key.clone()))
    }
}

impl DeltaSource for DeltaSeries {
    fn delta_for(&self, dataset: &Dataset, i: usize) -> Result<f64> {
        if self.values.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                expected: dataset.len(),
                found: self.values.len(),
            });
        }
        Ok(self.values[i])
    }
}

fn check_relevance(gap: f64, tol: f64, location: impl FnOnce() -> String) -> Result<()> {
    if !(gap.abs() > tol) {
        return Err(Error::WeakInstrument {
            location: location(),
            gap,
            tol,
        });
    }
    Ok(())
}

/// Cell-mean LATE estimates for discrete covariates.
pub fn delta_discrete(dataset: &Dataset, relevance_tol: f64) -> Result<DeltaTable> {
    let cells = CellIndex::new(dataset);
    let pivot = dataset.record(0).y;
    let mut sum_y = vec![[0.0f64; 2]; cells.len()];
    let mut sum_d = vec![[0.0f64; 2]; cells.len()];
    let mut counts = vec![[0usize; 2]; cells.len()];
    for (i, r) in dataset.records().iter().enumerate() {
        let c = cells.cell_of[i];
        let z = r.z as usize;
        sum_y[c][z] += r.y - pivot;
        sum_d[c][z] += r.d as f64;
        counts[c][z] += 1;
    }
    let mut out = Vec::with_capacity(cells.len());
    for (c, key) in cells.keys.iter().enumerate() {
        for arm in 0..2u8 {
            if counts[c][arm as usize] == 0 {
                return Err(Error::EmptyCell {
                    cell: key.clone(),
                    arm,
                });
            }
        }
        let m = |z: usize| sum_y[c][z] / counts[c][z] as f64;
        let p = |z: usize| sum_d[c][z] / counts[c][z] as f64;
        let gap = p(1) - p(0);
        check_relevance(gap, relevance_tol, || format!("cell {key:?}"))?;
        out.push(DeltaCell {
            key: key.clone(),
            delta: (m(1) - m(0)) / gap,
            mu0: m(0) + pivot,
            mu1: m(1) + pivot,
            p0: p(0),
            p1: p(1),
            counts: counts[c],
        });
    }
    Ok(DeltaTable { cells: out })
}

/// Leave-one-out kernel LATE estimates at every record's covariate value.
pub fn delta_continuous(
    dataset: &Dataset,
    kernel: &KernelSpec,
    relevance_tol: f64,
) -> Result<DeltaSeries> {
    let kd = KernelData::from_dataset(dataset)?;
    let n = kd.len();
    if n < 4 {
        return Err(Error::InvalidConfig(format!(
            "continuous first stage needs at least 4 records, got {n}"
        )));
    }
    let h = kernel.bandwidth(&kd.x)?;
    let pivot = dataset.record(0).y;
    let y: Vec<f64> = dataset.records().iter().map(|r| r.y - pivot).collect();
    let d = dataset.treatments();

    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = kd.x[i];
            let mut w = [0.0f64; 2];
            let mut wy = [0.0f64; 2];
            let mut wd = [0.0f64; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let k = kernel_weight((kd.x[j] - xi) / h);
                let z = kd.z[j] as usize;
                w[z] += k;
                wy[z] += k * y[j];
                wd[z] += k * d[j];
            }
            for arm in 0..2u8 {
                if w[arm as usize] < WEIGHT_UNDERFLOW {
                    return Err(Error::EmptyArm { index: i, arm });
                }
            }
            let gap = wd[1] / w[1] - wd[0] / w[0];
            check_relevance(gap, relevance_tol, || format!("record {i}"))?;
            Ok((wy[1] / w[1] - wy[0] / w[0]) / gap)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DeltaSeries { values, bandwidth: h })
}

/// `Ŵ_i = Y_i + (1 − D_i)·δ̂(X_i)`.
pub fn construct_w(dataset: &Dataset, delta: &impl DeltaSource) -> Result<Vec<f64>> {
    dataset
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.d == 1 {
                Ok(r.y)
            } else {
                Ok(r.y + delta.delta_for(dataset, i)?)
            }
        })
        .collect()
}

//! Kolmogorov–Smirnov comparison of `Ŵ` across instrument arms within each
//! discrete covariate cell, and the estimated influence functions feeding the
//! multiplier bootstrap.

use crate::dataset::{CellIndex, Dataset};
use crate::error::{Error, Result};
use crate::grid::{Grid, SupPoints, XAxis};
use crate::influence::{InfluenceKind, InfluenceMatrix, NO_GROUP};
use crate::kernel::kernel_weight;

/// Share of `w_hat[mask]` at or below `w`.
pub fn conditional_ecdf(w_hat: &[f64], mask: &[usize], w: f64) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let hits = mask.iter().filter(|&&i| w_hat[i] <= w).count();
    Ok(hits as f64 / mask.len() as f64)
}

fn sorted_values(w_hat: &[f64], idx: &[usize]) -> Vec<f64> {
    let mut v: Vec<f64> = idx.iter().map(|&i| w_hat[i]).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn ecdf_sorted(sorted: &[f64], w: f64) -> f64 {
    sorted.partition_point(|&v| v <= w) as f64 / sorted.len() as f64
}

/// `sup_{w,x} √n |F̂(w|x,0) − F̂(w|x,1)|`, with the supremum over `w` taken
/// exactly (every observed `Ŵ` in the cell) plus the grid points.
pub fn ks_statistic_discrete(dataset: &Dataset, w_hat: &[f64], grid: &Grid) -> Result<f64> {
    ks_statistic_discrete_with(dataset, w_hat, grid, SupPoints::GridAndData)
}

/// [`ks_statistic_discrete`] with the supremum over `w` restricted to `points`.
pub fn ks_statistic_discrete_with(
    dataset: &Dataset,
    w_hat: &[f64],
    grid: &Grid,
    points: SupPoints,
) -> Result<f64> {
    check_len(dataset, w_hat)?;
    let cells = CellIndex::new(dataset);
    let members = cells.arm_members(dataset);
    let mut sup = 0.0f64;
    for (c, arms) in members.iter().enumerate() {
        for (arm, m) in arms.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::EmptyCell {
                    cell: cells.keys[c].clone(),
                    arm: arm as u8,
                });
            }
        }
        let s0 = sorted_values(w_hat, &arms[0]);
        let s1 = sorted_values(w_hat, &arms[1]);
        let extra = if points == SupPoints::GridAndData {
            [s0.as_slice(), s1.as_slice()].concat()
        } else {
            Vec::new()
        };
        for &w in extra.iter().chain(grid.w_points()) {
            sup = sup.max((ecdf_sorted(&s0, w) - ecdf_sorted(&s1, w)).abs());
        }
    }
    Ok((dataset.len() as f64).sqrt() * sup)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteOptions {
    pub relevance_tol: f64,
    /// Bandwidth `h_w` of the untreated-outcome density estimates.
    pub density_bandwidth: f64,
    /// Clamp `κ̂` at zero.
    pub truncate_kappa: bool,
}

#[derive(Debug, Clone)]
struct CellStats {
    members: Vec<usize>,
    /// Record counts per arm.
    counts: [usize; 2],
    /// Untreated `Ŵ` per arm.
    untreated: [Vec<f64>; 2],
    p: [f64; 2],
    /// Pooled sorted `Ŵ`.
    pooled: Vec<f64>,
    mean_w: f64,
}

/// Per-cell quantities shared by `κ̂` and the influence matrix.
#[derive(Debug, Clone)]
pub struct DiscreteModel<'a> {
    w_hat: &'a [f64],
    cells: CellIndex,
    stats: Vec<CellStats>,
    arm: Vec<u8>,
    n: usize,
    opts: DiscreteOptions,
}

impl<'a> DiscreteModel<'a> {
    pub fn new(dataset: &Dataset, w_hat: &'a [f64], opts: DiscreteOptions) -> Result<Self> {
        check_len(dataset, w_hat)?;
        if !(opts.density_bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "density bandwidth must be positive, got {}",
                opts.density_bandwidth
            )));
        }
        let cells = CellIndex::new(dataset);
        let arms = cells.arm_members(dataset);
        let mut stats = Vec::with_capacity(cells.len());
        for (c, arm) in arms.into_iter().enumerate() {
            let mut untreated = [Vec::new(), Vec::new()];
            let mut p = [0.0; 2];
            for z in 0..2 {
                if arm[z].is_empty() {
                    return Err(Error::EmptyCell {
                        cell: cells.keys[c].clone(),
                        arm: z as u8,
                    });
                }
                let treated = arm[z].iter().filter(|&&i| dataset.record(i).d == 1).count();
                p[z] = treated as f64 / arm[z].len() as f64;
                untreated[z] = arm[z]
                    .iter()
                    .filter(|&&i| dataset.record(i).d == 0)
                    .map(|&i| w_hat[i])
                    .collect();
            }
            let members: Vec<usize> = {
                let mut m: Vec<usize> = arm[0].iter().chain(&arm[1]).copied().collect();
                m.sort_unstable();
                m
            };
            let pooled = sorted_values(w_hat, &members);
            let mean_w = members.iter().map(|&i| w_hat[i]).sum::<f64>() / members.len() as f64;
            stats.push(CellStats {
                counts: [arm[0].len(), arm[1].len()],
                members,
                untreated,
                p,
                pooled,
                mean_w,
            });
        }
        Ok(DiscreteModel {
            w_hat,
            cells,
            stats,
            arm: dataset.instruments(),
            n: dataset.len(),
            opts,
        })
    }

    pub fn cells(&self) -> &CellIndex {
        &self.cells
    }

    /// `f̂_{WD|XZ}(w, 0 | x, z)`: kernel density of untreated `Ŵ` in the cell
    /// arm, scaled by the untreated share.
    fn untreated_density(&self, cell: usize, arm: usize, w: f64) -> f64 {
        let s = &self.stats[cell];
        let h = self.opts.density_bandwidth;
        let sum: f64 = s.untreated[arm]
            .iter()
            .map(|&v| kernel_weight((v - w) / h))
            .sum();
        sum / (s.counts[arm] as f64 * h)
    }

    /// `κ̂(w, x) = −(f̂(w,0|x,1) − f̂(w,0|x,0)) / (p̂(x,1) − p̂(x,0))`.
    pub fn kappa_hat(&self, cell: usize, w: f64) -> Result<f64> {
        let s = &self.stats[cell];
        let gap = s.p[1] - s.p[0];
        if !(gap.abs() > self.opts.relevance_tol) {
            return Err(Error::WeakInstrument {
                location: format!("cell {:?}", self.cells.keys[cell]),
                gap,
                tol: self.opts.relevance_tol,
            });
        }
        let k = -(self.untreated_density(cell, 1, w) - self.untreated_density(cell, 0, w)) / gap;
        Ok(if self.opts.truncate_kappa { k.max(0.0) } else { k })
    }

    /// Entries `ψ̂_{wx,i} + φ̂_{wx,i}` on `grid`.
    pub fn influence(&self, grid: &Grid) -> Result<InfluenceMatrix> {
        let keys = match grid.x_axis() {
            XAxis::Cells(k) => k,
            XAxis::Points(_) => {
                return Err(Error::InvalidConfig(
                    "discrete influence needs a cell-valued x axis".into(),
                ))
            }
        };
        let w_points = grid.w_points();
        let n_w = w_points.len();
        // grid column of each data cell
        let mut column_of_cell = vec![NO_GROUP; self.cells.len()];
        for (k, key) in keys.iter().enumerate() {
            let c = self.cells.find(key).ok_or_else(|| Error::EmptyCell {
                cell: key.clone(),
                arm: 0,
            })?;
            column_of_cell[c] = k;
        }
        let mut group = vec![NO_GROUP; self.n];
        let mut values = vec![0.0; self.n * n_w];
        for (c, s) in self.stats.iter().enumerate() {
            if column_of_cell[c] == NO_GROUP {
                continue;
            }
            let pooled_cdf: Vec<f64> = w_points.iter().map(|&w| ecdf_sorted(&s.pooled, w)).collect();
            let kappa: Vec<f64> = w_points
                .iter()
                .map(|&w| self.kappa_hat(c, w))
                .collect::<Result<_>>()?;
            let share = [
                s.counts[0] as f64 / self.n as f64,
                s.counts[1] as f64 / self.n as f64,
            ];
            for &i in &s.members {
                group[i] = column_of_cell[c];
                let wi = self.w_hat[i];
                let arm_weight = if self.arm[i] == 0 {
                    1.0 / share[0]
                } else {
                    -1.0 / share[1]
                };
                let row = &mut values[i * n_w..(i + 1) * n_w];
                for (t, &w) in w_points.iter().enumerate() {
                    let indicator = if wi <= w { 1.0 } else { 0.0 };
                    let psi = indicator - pooled_cdf[t];
                    let phi = kappa[t] * (wi - s.mean_w);
                    row[t] = (psi + phi) * arm_weight;
                }
            }
        }
        InfluenceMatrix::factored(InfluenceKind::Discrete, n_w, keys.len(), values, group, false)
    }
}

/// `κ̂(w, x)` for the cell with covariate value `cell_key`.
pub fn kappa_hat(
    dataset: &Dataset,
    w_hat: &[f64],
    cell_key: &[f64],
    w: f64,
    density_bandwidth: f64,
    relevance_tol: f64,
) -> Result<f64> {
    let model = DiscreteModel::new(
        dataset,
        w_hat,
        DiscreteOptions {
            relevance_tol,
            density_bandwidth,
            truncate_kappa: false,
        },
    )?;
    let cell = model
        .cells()
        .find(cell_key)
        .ok_or_else(|| Error::MissingCell(cell_key.to_vec()))?;
    model.kappa_hat(cell, w)
}

/// Influence matrix of the discrete-covariate test on `grid`.
pub fn influence_discrete(
    dataset: &Dataset,
    w_hat: &[f64],
    grid: &Grid,
    opts: DiscreteOptions,
) -> Result<InfluenceMatrix> {
    DiscreteModel::new(dataset, w_hat, opts)?.influence(grid)
}

fn check_len(dataset: &Dataset, w_hat: &[f64]) -> Result<()> {
    if w_hat.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: w_hat.len(),
        });
    }
    Ok(())
}

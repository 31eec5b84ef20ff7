//! Modified KS test for a scalar continuous covariate.
//!
//! The conditional CDF comparison is replaced by its primitive through
//! `λ(t) = −t·1(t ≤ 0)`, integrated against `1(X ≤ x)` and reweighted by the
//! opposite arm's covariate density:
//!
//! ```text
//! Ĝ(w, x; z) = n⁻¹ Σ_i 1(X_i ≤ x, Z_i = z) · q̂(X_i, 1 − z) · λ(Ŵ_i − w)
//! T̂ᶜ       = sup_{w,x} √n |Ĝ(w, x; 0) − Ĝ(w, x; 1)|
//! ```
//!
//! Every conditional expectation in the influence functions is a plug-in
//! Nadaraya–Watson mean over all records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{Grid, SupPoints, XAxis};
use crate::influence::{accumulate_groups, InfluenceKind, InfluenceMatrix, NO_GROUP};
use crate::kernel::{kernel_weight, KernelData, WEIGHT_UNDERFLOW};

pub const DEFAULT_Q_FLOOR: f64 = 1e-8;

/// Records beyond this count skip the exact kink evaluation of the statistic.
pub const EXACT_SUP_MAX_N: usize = 5000;

/// `λ(t) = −t · 1(t ≤ 0)`.
#[inline]
pub fn lambda(t: f64) -> f64 {
    if t < 0.0 {
        -t
    } else {
        0.0
    }
}

/// Sign of the first-stage correction term `φ̂ᶜ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSign {
    /// `φ̂ᶜ = −κ̂ᶜ·(Ŵ − Ê(W|X))·…`
    PaperEstimator,
    /// `φ̂ᶜ = +κ̂ᶜ·(Ŵ − Ê(W|X))·…`
    Population,
}

impl PhiSign {
    fn factor(self) -> f64 {
        match self {
            PhiSign::PaperEstimator => -1.0,
            PhiSign::Population => 1.0,
        }
    }
}

/// Form of the estimated influence functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiForm {
    /// Finite-sample projection of `Ĝ` as a kernel U-statistic, with the
    /// first-stage perturbation of `δ̂` propagated through every `Ŵ`.
    Projection,
    /// `λ(w − Ŵ) − Ê[λ(w − Ŵ) | X]` with `φ̂ᶜ` through `κ̂ᶜ`.
    Printed,
    /// `λ(Ŵ − w) − Ê[λ(Ŵ − w) | X]` with `φ̂ᶜ` through `κ̂ᶜ`.
    Matched,
}

/// Cached `q̂(X_i, z)` and `Ŵ` for evaluating `Ĝ`.
#[derive(Debug, Clone)]
pub struct GFunctional {
    pub x: Vec<f64>,
    pub z: Vec<u8>,
    pub w_hat: Vec<f64>,
    /// `q[z][i] = q̂(X_i, z)`, leave-one-out.
    pub q: [Vec<f64>; 2],
    /// Bandwidth of `q̂`.
    pub bandwidth: f64,
}

impl GFunctional {
    pub fn build(dataset: &Dataset, w_hat: &[f64], q_bandwidth: f64) -> Result<GFunctional> {
        let kd = KernelData::from_dataset(dataset)?;
        if w_hat.len() != kd.len() {
            return Err(Error::DimensionMismatch {
                expected: kd.len(),
                found: w_hat.len(),
            });
        }
        if !(q_bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "density bandwidth must be positive, got {q_bandwidth}"
            )));
        }
        let n = kd.len();
        let pairs: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = [0.0f64; 2];
                for j in 0..n {
                    if j != i {
                        s[kd.z[j] as usize] += kernel_weight((kd.x[j] - kd.x[i]) / q_bandwidth);
                    }
                }
                let scale = ((n - 1).max(1) as f64) * q_bandwidth;
                (s[0] / scale, s[1] / scale)
            })
            .collect();
        let (q0, q1) = pairs.into_iter().unzip();
        Ok(GFunctional {
            x: kd.x,
            z: kd.z,
            w_hat: w_hat.to_vec(),
            q: [q0, q1],
            bandwidth: q_bandwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `Ĝ(w, x; z)`, summed in record order.
    pub fn g_hat(&self, w: f64, x: f64, z: u8) -> f64 {
        let other = 1 - z as usize;
        let mut acc = 0.0;
        for i in 0..self.len() {
            if self.z[i] == z && self.x[i] <= x {
                acc += self.q[other][i] * lambda(self.w_hat[i] - w);
            }
        }
        acc / self.len() as f64
    }

    /// `s_i` with `Ĝ(·;0) − Ĝ(·;1) = n⁻¹ Σ 1(X_i ≤ x) s_i λ(Ŵ_i − w)`.
    fn arm_weight(&self, i: usize) -> f64 {
        if self.z[i] == 0 {
            self.q[1][i]
        } else {
            -self.q[0][i]
        }
    }

    /// Record indices in increasing covariate order.
    fn x_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.x[a].total_cmp(&self.x[b]).then(a.cmp(&b)));
        order
    }
}

/// `sup √n |Ĝ(w,x;0) − Ĝ(w,x;1)|` over the grid; when `n ≤ 5000` the `w`
/// axis also includes every `Ŵ_i`, where `Ĝ` has its kinks.
pub fn ks_statistic_continuous(gf: &GFunctional, grid: &Grid) -> Result<f64> {
    ks_statistic_continuous_with(gf, grid, SupPoints::GridAndData)
}

/// [`ks_statistic_continuous`] with the supremum over `w` restricted to `points`.
pub fn ks_statistic_continuous_with(gf: &GFunctional, grid: &Grid, points: SupPoints) -> Result<f64> {
    let XAxis::Points(x_points) = grid.x_axis() else {
        return Err(Error::InvalidConfig(
            "continuous statistic needs a point-valued x axis".into(),
        ));
    };
    let n = gf.len();
    let mut w_eval: Vec<f64> = grid.w_points().to_vec();
    if points == SupPoints::GridAndData && n <= EXACT_SUP_MAX_N {
        w_eval.extend_from_slice(&gf.w_hat);
    }
    let order = gf.x_order();
    let weights: Vec<f64> = (0..n).map(|i| gf.arm_weight(i)).collect();
    let sup = w_eval
        .par_iter()
        .map(|&w| {
            let mut best = 0.0f64;
            let mut cum = 0.0f64;
            let mut pos = 0;
            for &x in x_points {
                while pos < n && gf.x[order[pos]] <= x {
                    let i = order[pos];
                    cum += weights[i] * lambda(gf.w_hat[i] - w);
                    pos += 1;
                }
                best = best.max(cum.abs());
            }
            best
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(sup / (n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousOptions {
    /// Bandwidth of the plug-in regressions on `X`.
    pub bandwidth: f64,
    pub relevance_tol: f64,
    pub q_floor: f64,
    pub phi_sign: PhiSign,
    pub psi_form: PsiForm,
    pub truncate_kappa: bool,
}

/// Inputs of the continuous influence functions beyond `Ĝ`'s cache.
#[derive(Debug, Clone)]
pub struct ContinuousModel<'a> {
    gf: &'a GFunctional,
    d: Vec<u8>,
    opts: ContinuousOptions,
}

impl<'a> ContinuousModel<'a> {
    pub fn new(dataset: &Dataset, gf: &'a GFunctional, opts: ContinuousOptions) -> Result<Self> {
        if dataset.len() != gf.len() {
            return Err(Error::DimensionMismatch {
                expected: gf.len(),
                found: dataset.len(),
            });
        }
        if !(opts.bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {}",
                opts.bandwidth
            )));
        }
        Ok(ContinuousModel {
            gf,
            d: dataset.records().iter().map(|r| r.d).collect(),
            opts,
        })
    }

    fn weight_row(&self, i: usize) -> Vec<f64> {
        let xi = self.gf.x[i];
        let h = self.opts.bandwidth;
        self.gf
            .x
            .iter()
            .map(|&xj| kernel_weight((xj - xi) / h))
            .collect()
    }

    fn check_floor(&self, i: usize) -> Result<()> {
        for arm in 0..2u8 {
            let v = self.gf.q[arm as usize][i];
            if !(v > self.opts.q_floor) {
                return Err(Error::DensityFloor {
                    index: i,
                    arm,
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn propensity_gap(&self, i: usize, k: &[f64]) -> Result<f64> {
        let mut s = [0.0f64; 2];
        let mut sd = [0.0f64; 2];
        for (j, &kj) in k.iter().enumerate() {
            let z = self.gf.z[j] as usize;
            s[z] += kj;
            sd[z] += kj * self.d[j] as f64;
        }
        if s[0] < WEIGHT_UNDERFLOW || s[1] < WEIGHT_UNDERFLOW {
            return Err(Error::ZeroWeightSum);
        }
        let gap = sd[1] / s[1] - sd[0] / s[0];
        if !(gap.abs() > self.opts.relevance_tol) {
            return Err(Error::WeakInstrument {
                location: format!("record {i}"),
                gap,
                tol: self.opts.relevance_tol,
            });
        }
        Ok(gap)
    }

    /// `κ̂ᶜ(w, X_i)` for every record, through direct plug-in regressions.
    pub fn kappa_c_hat(&self, w: f64) -> Result<Vec<f64>> {
        let kd = KernelData {
            x: self.gf.x.clone(),
            z: self.gf.z.clone(),
        };
        let untreated_below: Vec<f64> = (0..self.gf.len())
            .map(|j| {
                if self.d[j] == 0 && self.gf.w_hat[j] <= w {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let d: Vec<f64> = self.d.iter().map(|&v| v as f64).collect();
        let h = self.opts.bandwidth;
        (0..self.gf.len())
            .map(|i| {
                let xi = self.gf.x[i];
                let gap = kd.nw_at_point(&d, xi, Some(1), h)? - kd.nw_at_point(&d, xi, Some(0), h)?;
                if !(gap.abs() > self.opts.relevance_tol) {
                    return Err(Error::WeakInstrument {
                        location: format!("record {i}"),
                        gap,
                        tol: self.opts.relevance_tol,
                    });
                }
                let f1 = kd.nw_at_point(&untreated_below, xi, Some(1), h)?;
                let f0 = kd.nw_at_point(&untreated_below, xi, Some(0), h)?;
                let k = -(f1 - f0) / gap;
                Ok(if self.opts.truncate_kappa { k.max(0.0) } else { k })
            })
            .collect()
    }

    /// Entries `ψ̂ᶜ_{wx,i} + φ̂ᶜ_{wx,i}` on `grid`.
    pub fn influence(&self, grid: &Grid) -> Result<InfluenceMatrix> {
        if self.opts.psi_form == PsiForm::Projection {
            return Ok(InfluenceMatrix::projection(self.projection(grid)?));
        }
        let XAxis::Points(x_points) = grid.x_axis() else {
            return Err(Error::InvalidConfig(
                "continuous influence needs a point-valued x axis".into(),
            ));
        };
        let gf = self.gf;
        let n = gf.len();
        let w_points = grid.w_points();
        let n_w = w_points.len();
        let mut w_order: Vec<usize> = (0..n).collect();
        w_order.sort_by(|&a, &b| gf.w_hat[a].total_cmp(&gf.w_hat[b]).then(a.cmp(&b)));
        let phi_sign = self.opts.phi_sign.factor();

        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                self.check_floor(i)?;
                let k = self.weight_row(i);
                let gap = self.propensity_gap(i, &k)?;
                let mut s_all = 0.0;
                let mut sw_all = 0.0;
                let mut s_arm = [0.0f64; 2];
                for (j, &kj) in k.iter().enumerate() {
                    s_all += kj;
                    sw_all += kj * gf.w_hat[j];
                    s_arm[gf.z[j] as usize] += kj;
                }
                let e_w = sw_all / s_all;
                let wi = gf.w_hat[i];
                let s_i = gf.arm_weight(i);

                let mut row = Vec::with_capacity(n_w);
                // cumulative sums over Ŵ_j ≤ w
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = [0.0f64; 2];
                let mut pos = 0;
                for &w in w_points {
                    while pos < n && gf.w_hat[w_order[pos]] <= w {
                        let j = w_order[pos];
                        a += k[j];
                        b += k[j] * gf.w_hat[j];
                        if self.d[j] == 0 {
                            c[gf.z[j] as usize] += k[j];
                        }
                        pos += 1;
                    }
                    let (own, e_lambda) = if self.opts.psi_form == PsiForm::Printed {
                        // Σ_{Ŵ_j > w} K (Ŵ_j − w)
                        (lambda(w - wi), ((sw_all - b) - w * (s_all - a)) / s_all)
                    } else {
                        // Σ_{Ŵ_j ≤ w} K (w − Ŵ_j)
                        (lambda(wi - w), (w * a - b) / s_all)
                    };
                    let mut kappa = -(c[1] / s_arm[1] - c[0] / s_arm[0]) / gap;
                    if self.opts.truncate_kappa {
                        kappa = kappa.max(0.0);
                    }
                    let psi = own - e_lambda;
                    let phi = phi_sign * kappa * (wi - e_w);
                    row.push(s_i * (psi + phi));
                }
                Ok(row)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let group = x_groups(&gf.x, x_points);
        InfluenceMatrix::factored(
            InfluenceKind::Continuous,
            n_w,
            x_points.len(),
            rows.concat(),
            group,
            true,
        )
    }
}

impl ContinuousModel<'_> {
    fn projection(&self, grid: &Grid) -> Result<ProjectionParts> {
        let XAxis::Points(x_points) = grid.x_axis() else {
            return Err(Error::InvalidConfig(
                "continuous influence needs a point-valued x axis".into(),
            ));
        };
        let gf = self.gf;
        let n = gf.len();
        let h = self.opts.bandwidth;
        let h_q = gf.bandwidth;
        let w_points = grid.w_points();
        let n_w = w_points.len();

        let perm: Vec<usize> = (0..n)
            .filter(|&i| gf.z[i] == 0)
            .chain((0..n).filter(|&i| gf.z[i] == 1))
            .collect();
        let n0 = perm.iter().take_while(|&&i| gf.z[i] == 0).count();
        let kernel_rows = |bw: f64| -> Vec<f64> {
            let rows: Vec<Vec<f64>> = perm
                .par_iter()
                .map(|&i| {
                    perm.iter()
                        .map(|&j| if i == j { 0.0 } else { kernel_weight((gf.x[j] - gf.x[i]) / bw) })
                        .collect()
                })
                .collect();
            rows.concat()
        };
        let kd = kernel_rows(h);
        let kq = if h_q == h { None } else { Some(kernel_rows(h_q)) };

        struct RowStats {
            inv: [f64; 2],
            resid: f64,
        }
        let w_p: Vec<f64> = perm.iter().map(|&i| gf.w_hat[i]).collect();
        let d_p: Vec<f64> = perm.iter().map(|&i| self.d[i] as f64).collect();
        let stats = (0..n)
            .into_par_iter()
            .map(|p| {
                let i = perm[p];
                self.check_floor(i)?;
                let row = &kd[p * n..(p + 1) * n];
                let mut s = [0.0f64; 2];
                let mut sd = [0.0f64; 2];
                let mut sw = 0.0;
                for (c, &k) in row.iter().enumerate() {
                    let arm = usize::from(c >= n0);
                    s[arm] += k;
                    sd[arm] += k * d_p[c];
                    sw += k * w_p[c];
                }
                for arm in 0..2u8 {
                    if s[arm as usize] < WEIGHT_UNDERFLOW {
                        return Err(Error::EmptyArm { index: i, arm });
                    }
                }
                let gap = sd[1] / s[1] - sd[0] / s[0];
                if !(gap.abs() > self.opts.relevance_tol) {
                    return Err(Error::WeakInstrument {
                        location: format!("record {i}"),
                        gap,
                        tol: self.opts.relevance_tol,
                    });
                }
                let k0 = kernel_weight(0.0);
                let e_w = (sw + k0 * w_p[p]) / (s[0] + s[1] + k0);
                Ok(RowStats {
                    inv: [1.0 / (gap * s[0]), 1.0 / (gap * s[1])],
                    resid: w_p[p] - e_w,
                })
            })
            .collect::<Result<Vec<RowStats>>>()?;

        let mut lam = Vec::with_capacity(n * n_w);
        let mut below = Vec::with_capacity(n * n_w);
        for &i in &perm {
            for &w in w_points {
                lam.push(lambda(gf.w_hat[i] - w));
                below.push(if self.d[i] == 0 && gf.w_hat[i] <= w { 1.0 } else { 0.0 });
            }
        }
        let x_p: Vec<f64> = perm.iter().map(|&i| gf.x[i]).collect();
        let mut parts = ProjectionParts {
            perm: perm.clone(),
            n0,
            n_w,
            n_x: x_points.len(),
            group: x_groups(&x_p, x_points),
            lam,
            below,
            s: perm.iter().map(|&i| gf.arm_weight(i)).collect(),
            kd,
            kq,
            q_scale: 1.0 / (((n - 1).max(1) as f64) * h_q),
            inv0: stats.iter().map(|r| r.inv[0]).collect(),
            inv1: stats.iter().map(|r| r.inv[1]).collect(),
            resid: stats.iter().map(|r| r.resid).collect(),
            phi_factor: self.opts.phi_sign.factor(),
            column_mean: Vec::new(),
        };
        let ones = vec![1.0; n];
        let raw = parts.raw_process(&ones);
        parts.column_mean = raw.into_iter().map(|v| v / n as f64).collect();
        if let Some(pos) = parts.column_mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: 0, column: pos });
        }
        Ok(parts)
    }
}

/// Index of the first grid point at or above each covariate value.
fn x_groups(x: &[f64], x_points: &[f64]) -> Vec<usize> {
    x.iter()
        .map(|&xi| {
            let k = x_points.partition_point(|&p| p < xi);
            if k < x_points.len() {
                k
            } else {
                NO_GROUP
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel projection of the continuous test process. Entry `(i, (w, x))` is
///
/// ```text
/// 1(X_i ≤ x) s_i λ(Ŵ_i − w) + r_i(w, x) + φ_i(w, x) − column mean
/// ```
///
/// with `r_i` the projection of `q̂`'s pairing onto record `i` and `φ_i` the
/// effect of record `i` on `δ̂` at every untreated `Ŵ_k ≤ w`. Records are
/// stored grouped by arm.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ProjectionParts {
    /// Stored position to record index; arm 0 first.
    perm: Vec<usize>,
    n0: usize,
    n_w: usize,
    n_x: usize,
    group: Vec<usize>,
    /// `λ(Ŵ_k − w)`, row-major `n × |w|`.
    lam: Vec<f64>,
    /// `1(Ŵ_k ≤ w, D_k = 0)`.
    below: Vec<f64>,
    s: Vec<f64>,
    /// First-stage kernel weights, zero diagonal.
    kd: Vec<f64>,
    /// Density kernel weights when their bandwidth differs.
    kq: Option<Vec<f64>>,
    q_scale: f64,
    /// `1 / (Δp̂_k · S_{z,k})` per arm.
    inv0: Vec<f64>,
    inv1: Vec<f64>,
    /// `Ŵ_k − Ê(W | X_k)`.
    resid: Vec<f64>,
    phi_factor: f64,
    column_mean: Vec<f64>,
}

impl ProjectionParts {
    pub(crate) fn len(&self) -> usize {
        self.perm.len()
    }

    pub(crate) fn n_cols(&self) -> usize {
        self.n_w * self.n_x
    }

    fn raw_process(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let n0 = self.n0;
        let up: Vec<f64> = self.perm.iter().map(|&i| u[i]).collect();
        let t: Vec<f64> = up.iter().zip(&self.resid).map(|(a, b)| a * b).collect();
        let kq = self.kq.as_deref().unwrap_or(&self.kd);
        let mut c1 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for p in 0..n {
            let row = &self.kd[p * n..(p + 1) * n];
            let delta = dot(&row[n0..], &t[n0..]) * self.inv1[p] - dot(&row[..n0], &t[..n0]) * self.inv0[p];
            let qrow = &kq[p * n..(p + 1) * n];
            let v = if p < n0 {
                dot(&qrow[n0..], &up[n0..])
            } else {
                -dot(&qrow[..n0], &up[..n0])
            } * self.q_scale;
            c1[p] = up[p] * self.s[p] + v;
            c2[p] = -self.phi_factor * self.s[p] * delta;
        }
        let mut acc = vec![0.0; self.n_w * self.n_x];
        let n_w = self.n_w;
        accumulate_groups(&mut acc, n_w, self.n_x, &self.group, true, |p, slot| {
            let lam = &self.lam[p * n_w..(p + 1) * n_w];
            let below = &self.below[p * n_w..(p + 1) * n_w];
            for ((s, &l), &b) in slot.iter_mut().zip(lam).zip(below) {
                *s += c1[p] * l + c2[p] * b;
            }
        });
        acc
    }

    pub(crate) fn process(&self, u: &[f64]) -> Vec<f64> {
        let total: f64 = u.iter().sum();
        let mut acc = self.raw_process(u);
        for (a, m) in acc.iter_mut().zip(&self.column_mean) {
            *a -= m * total;
        }
        acc
    }
}

/// Influence matrix of the continuous-covariate test on `grid`.
pub fn influence_continuous(
    dataset: &Dataset,
    gf: &GFunctional,
    grid: &Grid,
    opts: ContinuousOptions,
) -> Result<InfluenceMatrix> {
    ContinuousModel::new(dataset, gf, opts)?.influence(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CovariateKind, Observation};
    use proptest::prelude::*;

    const X: [f64; 4] = [0.1, 0.4, 0.7, 0.9];
    const Z: [u8; 4] = [0, 1, 0, 1];
    const D: [u8; 4] = [0, 1, 0, 1];
    const W: [f64; 4] = [1.0, 2.5, 0.3, 1.7];

    fn dataset(x: &[f64], d: &[u8], z: &[u8]) -> Dataset {
        let records = (0..x.len())
            .map(|i| Observation {
                y: 0.0,
                d: d[i],
                z: z[i],
                x: vec![x[i]],
            })
            .collect();
        Dataset::from_records(records, vec![CovariateKind::Continuous]).unwrap()
    }

    fn small() -> (Dataset, GFunctional) {
        let ds = dataset(&X, &D, &Z);
        let gf = GFunctional::build(&ds, &W, 0.4).unwrap();
        (ds, gf)
    }

    fn small_grid() -> Grid {
        Grid::new(vec![0.5, 2.0], XAxis::Points(vec![0.5, 1.0])).unwrap()
    }

    fn opts(phi_sign: PhiSign, psi_form: PsiForm) -> ContinuousOptions {
        ContinuousOptions {
            bandwidth: 0.5,
            relevance_tol: 0.01,
            q_floor: DEFAULT_Q_FLOOR,
            phi_sign,
            psi_form,
            truncate_kappa: false,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn lambda_identities() {
        assert_eq!(lambda(0.0), 0.0);
        assert_eq!(lambda(-2.5), 2.5);
        assert_eq!(lambda(3.0), 0.0);
        for t in [-3.0, -0.25, 0.0, 0.5, 7.0] {
            assert_eq!(lambda(t) - lambda(-t), -t);
        }
    }

    #[test]
    fn density_cache_oracle() {
        let (_, gf) = small();
        let q0 = [0.107_931_329_721_576_46, 0.501_895_720_258_007_3, 0.107_931_329_721_576_46, 0.338_380_244_397_906_26];
        let q1 = [0.295_940_332_223_327, 0.152_207_571_157_518_23, 0.544_335_632_432_586_5, 0.152_207_571_157_518_23];
        for i in 0..4 {
            assert!(close(gf.q[0][i], q0[i]) && close(gf.q[1][i], q1[i]), "record {i}");
        }
    }

    #[test]
    fn g_hat_oracle() {
        let (_, gf) = small();
        let cases = [
            (0.5, 0.5, 0.0, 0.0),
            (0.5, 1.0, 0.027_216_781_621_629_327, 0.0),
            (2.0, 0.5, 0.073_985_083_055_831_75, 0.0),
            (2.0, 1.0, 0.305_327_726_839_681, 0.025_378_518_329_842_97),
        ];
        for (w, x, g0, g1) in cases {
            assert!(close(gf.g_hat(w, x, 0), g0), "G0 at ({w},{x})");
            assert!(close(gf.g_hat(w, x, 1), g1), "G1 at ({w},{x})");
        }
    }

    #[test]
    fn statistic_oracle_includes_kinks() {
        let (_, gf) = small();
        let t = ks_statistic_continuous(&gf, &small_grid()).unwrap();
        assert!(close(t, 0.685_372_347_084_177_9), "{t}");
    }

    #[test]
    fn influence_oracle_matched_population() {
        let (ds, gf) = small();
        let m = influence_continuous(&ds, &gf, &small_grid(), opts(PhiSign::Population, PsiForm::Matched)).unwrap();
        let expected = [
            [-0.052_324_529_998_580_484, -0.047_535_473_399_546_64, -0.052_324_529_998_580_484, -0.047_535_473_399_546_64],
            [-0.248_232_837_995_423_06, -0.174_370_985_899_328_1, -0.248_232_837_995_423_06, -0.174_370_985_899_328_1],
            [0.0, 0.0, -0.316_251_110_546_909_7, -0.070_053_604_001_942_33],
            [0.0, 0.0, -0.070_534_850_643_317_46, 0.036_549_335_762_109_68],
        ];
        let dense = m.to_dense();
        for i in 0..4 {
            for c in 0..4 {
                assert!(close(dense[i][c], expected[i][c]), "({i},{c}): {}", dense[i][c]);
            }
        }
    }

    #[test]
    fn influence_oracle_printed_estimator() {
        let (ds, gf) = small();
        let m = influence_continuous(&ds, &gf, &small_grid(), opts(PhiSign::PaperEstimator, PsiForm::Printed)).unwrap();
        let expected = [
            [-0.095_813_620_132_897_72, 0.078_441_705_492_446_49, -0.095_813_620_132_897_72, 0.078_441_705_492_446_49],
            [-0.248_232_837_995_422_73, 0.373_264_595_633_146_7, -0.248_232_837_995_422_73, 0.373_264_595_633_146_7],
            [0.0, 0.0, -0.115_278_444_741_530_78, 0.512_114_691_411_224_7],
            [0.0, 0.0, -0.005_695_789_275_553_166, 0.157_281_322_811_642_95],
        ];
        let dense = m.to_dense();
        for i in 0..4 {
            for c in 0..4 {
                assert!(close(dense[i][c], expected[i][c]), "({i},{c}): {}", dense[i][c]);
            }
        }
    }

    #[test]
    fn printed_and_matched_differ_by_centred_outcome() {
        // λ(w − W) − λ(W − w) = W − w, so ψ_printed − ψ_matched = (Ŵ − Ê[Ŵ|X])·s
        let (ds, gf) = small();
        let grid = small_grid();
        let a = influence_continuous(&ds, &gf, &grid, opts(PhiSign::Population, PsiForm::Printed)).unwrap();
        let b = influence_continuous(&ds, &gf, &grid, opts(PhiSign::Population, PsiForm::Matched)).unwrap();
        let kd = KernelData::from_dataset(&ds).unwrap();
        for i in 0..4 {
            let e_w = kd.nw_at_point(&W, X[i], None, 0.5).unwrap();
            let s = gf.arm_weight(i);
            for c in 0..grid.n_columns() {
                let diff = a.entry(i, c) - b.entry(i, c);
                let want = if b.entry(i, c) == 0.0 && a.entry(i, c) == 0.0 { 0.0 } else { s * (W[i] - e_w) };
                assert!((diff - want).abs() < 1e-12, "({i},{c})");
            }
        }
    }

    #[test]
    fn sweep_kappa_matches_direct_regressions() {
        let ds = dataset(
            &[0.05, 0.2, 0.3, 0.45, 0.5, 0.6, 0.8, 0.95],
            &[0, 1, 0, 0, 1, 0, 1, 0],
            &[0, 1, 0, 1, 1, 0, 1, 0],
        );
        let w_hat = [0.4, 1.2, -0.3, 0.9, 2.0, 0.1, 1.5, 0.7];
        let gf = GFunctional::build(&ds, &w_hat, 0.3).unwrap();
        let o = opts(PhiSign::Population, PsiForm::Matched);
        let model = ContinuousModel::new(&ds, &gf, o).unwrap();
        let ws = [-0.5, 0.0, 0.5, 0.8, 1.9];
        let grid = Grid::new(ws.to_vec(), XAxis::Points(vec![1.0])).unwrap();
        let m = model.influence(&grid).unwrap();
        let kd = KernelData::from_dataset(&ds).unwrap();
        for (t, &w) in ws.iter().enumerate() {
            let kappa = model.kappa_c_hat(w).unwrap();
            for i in 0..8 {
                let lam: Vec<f64> = w_hat.iter().map(|&v| lambda(v - w)).collect();
                let e_l = kd.nw_at_point(&lam, ds.record(i).x[0], None, 0.5).unwrap();
                let e_w = kd.nw_at_point(&w_hat, ds.record(i).x[0], None, 0.5).unwrap();
                let want = gf.arm_weight(i) * (lambda(w_hat[i] - w) - e_l + kappa[i] * (w_hat[i] - e_w));
                assert!((m.entry(i, t) - want).abs() < 1e-12, "({i},{w})");
            }
        }
    }

    #[test]
    fn truncation_clamps_kappa() {
        let (ds, gf) = small();
        let mut o = opts(PhiSign::Population, PsiForm::Matched);
        o.truncate_kappa = true;
        let model = ContinuousModel::new(&ds, &gf, o).unwrap();
        for w in [-1.0, 0.5, 1.2, 3.0] {
            assert!(model.kappa_c_hat(w).unwrap().iter().all(|&k| k >= 0.0));
        }
    }

    #[test]
    fn density_floor_is_reported() {
        let ds = dataset(&[0.0, 0.1, 50.0, 50.1], &[0, 1, 0, 1], &[0, 1, 0, 1]);
        let gf = GFunctional::build(&ds, &[0.0, 1.0, 2.0, 3.0], 0.05).unwrap();
        let err = influence_continuous(&ds, &gf, &small_grid(), opts(PhiSign::Population, PsiForm::Matched))
            .unwrap_err();
        assert!(matches!(err, Error::DensityFloor { .. }), "{err:?}");
    }

    #[test]
    fn weak_instrument_is_reported() {
        let ds = dataset(&X, &[1, 1, 1, 1], &Z);
        let gf = GFunctional::build(&ds, &W, 0.4).unwrap();
        let err = influence_continuous(&ds, &gf, &small_grid(), opts(PhiSign::Population, PsiForm::Matched))
            .unwrap_err();
        assert!(matches!(err, Error::WeakInstrument { .. }), "{err:?}");
    }

    #[test]
    fn rejects_cell_axis() {
        let (_, gf) = small();
        let grid = Grid::new(vec![0.0, 1.0], XAxis::Cells(vec![vec![1.0]])).unwrap();
        assert!(ks_statistic_continuous(&gf, &grid).is_err());
    }

    fn random_case(seed: u64, n: usize) -> (Dataset, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut d = Vec::new();
        let mut z = Vec::new();
        for i in 0..n {
            x.push(rng.random::<f64>());
            let zi = (i % 2) as u8;
            z.push(zi);
            d.push(u8::from(zi == 1 && rng.random::<f64>() < 0.8));
        }
        let w = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (dataset(&x, &d, &z), w)
    }

    /// Entries of the projection form from their definition, one record and
    /// one grid point at a time.
    fn projection_oracle(ds: &Dataset, gf: &GFunctional, grid: &Grid, o: ContinuousOptions) -> Vec<Vec<f64>> {
        let n = gf.len();
        let d: Vec<u8> = ds.records().iter().map(|r| r.d).collect();
        let XAxis::Points(xs) = grid.x_axis() else { unreachable!() };
        let k = |a: usize, b: usize, h: f64| if a == b { 0.0 } else { kernel_weight((gf.x[a] - gf.x[b]) / h) };
        let h = o.bandwidth;
        let h_q = gf.bandwidth;
        let mut gap = vec![0.0; n];
        let mut s_arm = vec![[0.0; 2]; n];
        let mut resid = vec![0.0; n];
        for a in 0..n {
            let (mut sd, mut num, mut den) = ([0.0; 2], 0.0, 0.0);
            for b in 0..n {
                let kab = k(a, b, h);
                s_arm[a][gf.z[b] as usize] += kab;
                sd[gf.z[b] as usize] += kab * d[b] as f64;
                let full = if a == b { kernel_weight(0.0) } else { kab };
                num += full * gf.w_hat[b];
                den += full;
            }
            gap[a] = sd[1] / s_arm[a][1] - sd[0] / s_arm[a][0];
            resid[a] = gf.w_hat[a] - num / den;
        }
        let mut out = vec![vec![0.0; grid.n_columns()]; n];
        for (xi, &x) in xs.iter().enumerate() {
            for (wi, &w) in grid.w_points().iter().enumerate() {
                let col = xi * grid.w_points().len() + wi;
                for i in 0..n {
                    let mut e = 0.0;
                    if gf.x[i] <= x {
                        e += gf.arm_weight(i) * lambda(gf.w_hat[i] - w);
                    }
                    for m in 0..n {
                        if gf.x[m] > x {
                            continue;
                        }
                        let lam = lambda(gf.w_hat[m] - w);
                        let pair = k(i, m, h_q) / ((n - 1) as f64 * h_q);
                        e += match (gf.z[m], gf.z[i]) {
                            (0, 1) => pair * lam,
                            (1, 0) => -pair * lam,
                            _ => 0.0,
                        };
                        if d[m] == 0 && gf.w_hat[m] <= w {
                            let sign = if gf.z[i] == 1 { 1.0 } else { -1.0 };
                            let dd = sign * k(m, i, h) * resid[i] / (gap[m] * s_arm[m][gf.z[i] as usize]);
                            e -= o.phi_sign.factor() * gf.arm_weight(m) * dd;
                        }
                    }
                    out[i][col] = e;
                }
                let mean = out.iter().map(|r| r[col]).sum::<f64>() / n as f64;
                for r in out.iter_mut() {
                    r[col] -= mean;
                }
            }
        }
        out
    }

    fn mixed() -> (Dataset, [f64; 6]) {
        let x = [0.1, 0.25, 0.4, 0.6, 0.7, 0.9];
        let z = [0, 1, 0, 1, 0, 1];
        let d = [0, 1, 0, 1, 1, 0];
        (dataset(&x, &d, &z), [1.0, 2.5, 0.8, 1.7, 0.3, 1.2])
    }

    #[test]
    fn projection_entries_match_definition() {
        let (ds, w) = mixed();
        let grid = Grid::new(vec![0.5, 1.1, 2.0], XAxis::Points(vec![0.3, 0.65, 1.0])).unwrap();
        for h_q in [0.4, 0.5] {
            let gf = GFunctional::build(&ds, &w, h_q).unwrap();
            for sign in [PhiSign::Population, PhiSign::PaperEstimator] {
                let o = opts(sign, PsiForm::Projection);
                let dense = influence_continuous(&ds, &gf, &grid, o).unwrap().to_dense();
                let want = projection_oracle(&ds, &gf, &grid, o);
                for i in 0..6 {
                    for c in 0..grid.n_columns() {
                        assert!((dense[i][c] - want[i][c]).abs() < 1e-12, "h_q {h_q} {sign:?} ({i},{c}): {} vs {}", dense[i][c], want[i][c]);
                    }
                }
            }
        }
    }

    #[test]
    fn projection_process_is_linear_and_centered() {
        let (ds, w) = mixed();
        let grid = Grid::new(vec![0.5, 1.1, 2.0], XAxis::Points(vec![0.3, 1.0])).unwrap();
        let gf = GFunctional::build(&ds, &w, 0.4).unwrap();
        let m = influence_continuous(&ds, &gf, &grid, opts(PhiSign::Population, PsiForm::Projection)).unwrap();
        let dense = m.to_dense();
        let u = [0.3, -1.2, 0.7, 2.0, -0.4, 1.1];
        let p = m.process(&u).unwrap();
        for c in 0..grid.n_columns() {
            let direct: f64 = (0..6).map(|i| u[i] * dense[i][c]).sum();
            assert!((p[c] - direct).abs() < 1e-12);
        }
        assert!(m.process(&[1.0; 6]).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_influence_is_thread_invariant() {
        let ds = crate::dgp::gen_dgp(&crate::dgp::DgpSpec::new(crate::dgp::DgpId::Dgp3, 120, 0.7, 0.0, 0.5, 3)).unwrap();
        let w: Vec<f64> = ds.records().iter().map(|r| r.y + (1 - r.d) as f64 * r.x[0]).collect();
        let gf = GFunctional::build(&ds, &w, 0.15).unwrap();
        let grid = Grid::new(vec![0.2, 0.6, 1.0, 1.5], XAxis::Points(vec![0.25, 0.5, 1.0])).unwrap();
        let mut o = opts(PhiSign::Population, PsiForm::Projection);
        o.bandwidth = 0.2;
        let u: Vec<f64> = (0..120).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let run = |k: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
            pool.install(|| influence_continuous(&ds, &gf, &grid, o).unwrap().process(&u).unwrap())
        };
        let one = run(1);
        for k in [2, 4] {
            assert!(run(k).iter().zip(&one).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn g_hat_monotone_in_w_and_x(seed in any::<u64>(), n in 4usize..30) {
            let (ds, w_hat) = random_case(seed, n);
            let gf = GFunctional::build(&ds, &w_hat, 0.2).unwrap();
            for z in 0..2u8 {
                let mut prev_w = 0.0;
                for k in 0..=20 {
                    let w = -2.5 + 0.25 * k as f64;
                    let g = gf.g_hat(w, 0.7, z);
                    prop_assert!(g >= prev_w);
                    prev_w = g;
                    let mut prev_x = 0.0;
                    for m in 0..=10 {
                        let gx = gf.g_hat(w, 0.1 * m as f64, z);
                        prop_assert!(gx >= prev_x);
                        prev_x = gx;
                    }
                }
            }
        }

        #[test]
        fn g_hat_slope_is_weighted_subcdf(seed in any::<u64>(), n in 4usize..30, w in -1.9f64..1.9) {
            let (ds, w_hat) = random_case(seed, n);
            prop_assume!(w_hat.iter().all(|v| (v - w).abs() > 1e-3));
            let gf = GFunctional::build(&ds, &w_hat, 0.2).unwrap();
            let eps = 1e-4;
            for z in 0..2u8 {
                let slope = (gf.g_hat(w + eps, 0.6, z) - gf.g_hat(w - eps, 0.6, z)) / (2.0 * eps);
                let other = 1 - z as usize;
                let cdf = (0..n)
                    .filter(|&i| gf.z[i] == z && gf.x[i] <= 0.6 && w_hat[i] <= w)
                    .map(|i| gf.q[other][i])
                    .sum::<f64>() / n as f64;
                prop_assert!((slope - cdf).abs() < 1e-8, "{} vs {}", slope, cdf);
            }
        }

        #[test]
        fn statistic_matches_direct_g_and_relabelling(seed in any::<u64>(), n in 4usize..25) {
            let (ds, w_hat) = random_case(seed, n);
            let gf = GFunctional::build(&ds, &w_hat, 0.2).unwrap();
            let xs = vec![0.25, 0.5, 0.75, 1.0];
            let grid = Grid::new(vec![-1.0, 0.0, 1.0], XAxis::Points(xs.clone())).unwrap();
            let t = ks_statistic_continuous(&gf, &grid).unwrap();
            let mut direct = 0.0f64;
            for &w in grid.w_points().iter().chain(&w_hat) {
                for &x in &xs {
                    direct = direct.max((gf.g_hat(w, x, 0) - gf.g_hat(w, x, 1)).abs());
                }
            }
            direct *= (n as f64).sqrt();
            prop_assert!((t - direct).abs() < 1e-12 * (1.0 + direct));

            let flipped = GFunctional::build(&ds.relabel_instrument(), &w_hat, 0.2).unwrap();
            prop_assert_eq!(ks_statistic_continuous(&flipped, &grid).unwrap(), t);
        }
    }
}

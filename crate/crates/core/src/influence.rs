//! Estimated influence values `ψ̂ + φ̂` on an evaluation grid.
//!
//! A matrix is only ever used through the linear map
//! `U ↦ Σ_i U_i · entry(i, ·)`, so it is stored in whatever form makes that
//! map cheap:
//!
//! - factored: `entry(i, (w, x)) = a_i(w) · 1(record i enters column x)`, where
//!   a record enters the columns of its own covariate cell (discrete) or of
//!   every grid point `x ≥ X_i` (continuous). One map costs `O(n·|w|)`.
//! - projection: the continuous test's kernel U-statistic projection, applied
//!   through kernel matrix-vector products in `O(n² + n·|w|)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ks_continuous::ProjectionParts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceKind {
    Discrete,
    Continuous,
    /// Arbitrary dense `n × G` table.
    Dense,
}

/// Group value for records that enter no column.
pub const NO_GROUP: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Factored {
    pub n_w: usize,
    pub n_groups: usize,
    /// Row-major `n × n_w` values `a_i(w)`.
    pub row_values: Vec<f64>,
    /// Group of each record, or [`NO_GROUP`].
    pub group: Vec<usize>,
    /// When set, column group `k` aggregates records of groups `0..=k`.
    pub cumulative: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Factored(Factored),
    Projection(Box<ProjectionParts>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    kind: InfluenceKind,
    n: usize,
    n_cols: usize,
    repr: Repr,
}

/// Adds the rows of `values` selected by `weights` into `acc`, grouped, then
/// takes prefix sums over groups when `cumulative`.
pub(crate) fn accumulate_groups(
    acc: &mut [f64],
    n_w: usize,
    n_groups: usize,
    group: &[usize],
    cumulative: bool,
    mut add_row: impl FnMut(usize, &mut [f64]),
) {
    for (i, &g) in group.iter().enumerate() {
        if g == NO_GROUP {
            continue;
        }
        add_row(i, &mut acc[g * n_w..(g + 1) * n_w]);
    }
    if cumulative {
        for k in 1..n_groups {
            let (done, rest) = acc.split_at_mut(k * n_w);
            let prev = &done[(k - 1) * n_w..];
            for (s, &p) in rest[..n_w].iter_mut().zip(prev) {
                *s += p;
            }
        }
    }
}

impl Factored {
    fn process(&self, u: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_groups * self.n_w];
        accumulate_groups(&mut acc, self.n_w, self.n_groups, &self.group, self.cumulative, |i, slot| {
            let ui = u[i];
            if ui == 0.0 {
                return;
            }
            let row = &self.row_values[i * self.n_w..(i + 1) * self.n_w];
            for (s, &v) in slot.iter_mut().zip(row) {
                *s += ui * v;
            }
        });
        acc
    }
}

impl InfluenceMatrix {
    pub(crate) fn factored(
        kind: InfluenceKind,
        n_w: usize,
        n_groups: usize,
        row_values: Vec<f64>,
        group: Vec<usize>,
        cumulative: bool,
    ) -> Result<InfluenceMatrix> {
        let n = group.len();
        if row_values.len() != n * n_w {
            return Err(Error::DimensionMismatch {
                expected: n * n_w,
                found: row_values.len(),
            });
        }
        if let Some(&g) = group.iter().find(|&&g| g != NO_GROUP && g >= n_groups) {
            return Err(Error::DimensionMismatch {
                expected: n_groups,
                found: g,
            });
        }
        if let Some(pos) = row_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / n_w.max(1),
                column: pos % n_w.max(1),
            });
        }
        Ok(InfluenceMatrix {
            kind,
            n,
            n_cols: n_w * n_groups,
            repr: Repr::Factored(Factored {
                n_w,
                n_groups,
                row_values,
                group,
                cumulative,
            }),
        })
    }

    pub(crate) fn projection(parts: ProjectionParts) -> InfluenceMatrix {
        InfluenceMatrix {
            kind: InfluenceKind::Continuous,
            n: parts.len(),
            n_cols: parts.n_cols(),
            repr: Repr::Projection(Box::new(parts)),
        }
    }

    /// Wraps an explicit `n × G` table.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<InfluenceMatrix> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        InfluenceMatrix::factored(
            InfluenceKind::Dense,
            n_cols,
            1,
            values,
            vec![0; rows.len()],
            false,
        )
    }

    pub fn kind(&self) -> InfluenceKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// `Σ_i U_i · entry(i, col)` for every column, `col = x_index · |w| + w_index`.
    pub fn process(&self, multipliers: &[f64]) -> Result<Vec<f64>> {
        if multipliers.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: multipliers.len(),
            });
        }
        Ok(match &self.repr {
            Repr::Factored(f) => f.process(multipliers),
            Repr::Projection(p) => p.process(multipliers),
        })
    }

    /// Entry for record `i` at column `col`.
    pub fn entry(&self, i: usize, col: usize) -> f64 {
        match &self.repr {
            Repr::Factored(f) => {
                let (k, w) = (col / f.n_w, col % f.n_w);
                let g = f.group[i];
                let active = if f.cumulative { g <= k } else { g == k };
                if g != NO_GROUP && active {
                    f.row_values[i * f.n_w + w]
                } else {
                    0.0
                }
            }
            Repr::Projection(_) => self.unit_response(i)[col],
        }
    }

    fn unit_response(&self, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        e[i] = 1.0;
        self.process(&e).expect("unit vector has matching length")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| match &self.repr {
                Repr::Factored(_) => (0..self.n_cols).map(|c| self.entry(i, c)).collect(),
                Repr::Projection(_) => self.unit_response(i),
            })
            .collect()
    }

    /// `sup_col |n^{-1/2} Σ_i U_i · entry(i, col)|`.
    pub fn simulate_sup(&self, multipliers: &[f64]) -> Result<f64> {
        let acc = self.process(multipliers)?;
        let sup = acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(sup / (self.n as f64).sqrt())
    }
}

/// Free-function form of [`InfluenceMatrix::simulate_sup`].
pub fn simulate_sup(influence: &InfluenceMatrix, multipliers: &[f64]) -> Result<f64> {
    influence.simulate_sup(multipliers)
}

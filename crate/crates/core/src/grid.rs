use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the statistic's supremum over `w` is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupPoints {
    /// Grid points only, the same index set as the bootstrap process.
    Grid,
    /// Grid points plus the observed `Ŵ` values.
    GridAndData,
}

/// Equally spaced points over the range of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisGrid {
    pub points: Vec<f64>,
    /// Set when the sample range has zero width; `points` then holds the single value.
    pub degenerate: bool,
}

/// `count` equally spaced points spanning `[min(values), max(values)]`, inclusive.
pub fn make_grid(values: &[f64], count: usize) -> Result<AxisGrid> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if count < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid needs at least 2 points, got {count}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row: 0, column: 0 });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(AxisGrid {
            points: vec![lo],
            degenerate: true,
        });
    }
    let step = (hi - lo) / (count - 1) as f64;
    let mut points: Vec<f64> = (0..count).map(|k| lo + step * k as f64).collect();
    // pin the right endpoint against rounding
    points[count - 1] = hi;
    Ok(AxisGrid {
        points,
        degenerate: false,
    })
}

/// Covariate axis of an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    /// Observed support points of a discrete covariate vector.
    Cells(Vec<Vec<f64>>),
    /// Increasing evaluation points of a scalar continuous covariate.
    Points(Vec<f64>),
}

impl XAxis {
    pub fn len(&self) -> usize {
        match self {
            XAxis::Cells(c) => c.len(),
            XAxis::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evaluation points for the suprema over `(w, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    w_points: Vec<f64>,
    x_axis: XAxis,
}

impl Grid {
    pub fn new(w_points: Vec<f64>, x_axis: XAxis) -> Result<Grid> {
        if w_points.len() < 2 {
            return Err(match w_points.first() {
                Some(&w) => Error::DegenerateRange(w),
                None => Error::EmptyInput,
            });
        }
        if !strictly_increasing(&w_points) {
            return Err(Error::InvalidConfig(
                "w grid must be strictly increasing".into(),
            ));
        }
        match &x_axis {
            XAxis::Points(p) if !strictly_increasing(p) && p.len() > 1 => {
                return Err(Error::InvalidConfig(
                    "x grid must be strictly increasing".into(),
                ))
            }
            XAxis::Points(p) if p.is_empty() => return Err(Error::EmptyInput),
            XAxis::Cells(c) if c.is_empty() => return Err(Error::EmptyInput),
            _ => {}
        }
        Ok(Grid { w_points, x_axis })
    }

    pub fn w_points(&self) -> &[f64] {
        &self.w_points
    }

    pub fn x_axis(&self) -> &XAxis {
        &self.x_axis
    }

    /// `(|w_points|, |x_points|)`.
    pub fn sizes(&self) -> (usize, usize) {
        (self.w_points.len(), self.x_axis.len())
    }

    /// Number of `(w, x)` columns; columns are ordered x-major.
    pub fn n_columns(&self) -> usize {
        self.w_points.len() * self.x_axis.len()
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[0] < p[1])
}

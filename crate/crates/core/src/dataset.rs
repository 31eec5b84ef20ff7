//! Validated samples of `(Y, D, Z, X)`.
//!
//! Raw rows are laid out as `[y, d, z, x_1, ..., x_k]`. Covariates are either
//! all discrete (any number of coordinates, cells are their cross product) or
//! a single continuous coordinate. No covariates at all is treated as one
//! discrete cell.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Discrete,
    Continuous,
}

/// Which of the two tests a dataset supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub d: u8,
    pub z: u8,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Observation>,
    covariate_kinds: Vec<CovariateKind>,
}

/// Validates raw numeric rows `[y, d, z, x...]` into a [`Dataset`].
pub fn validate_dataset(raw: &[Vec<f64>], kinds: &[CovariateKind]) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_kinds(kinds)?;
    let width = 3 + kinds.len();
    let mut records = Vec::with_capacity(raw.len());
    for (row, values) in raw.iter().enumerate() {
        if values.len() != width {
            return Err(Error::RaggedRow {
                row,
                found: values.len(),
                expected: width,
            });
        }
        if let Some(column) = values.iter().position(|v| v.is_nan() || v.is_infinite()) {
            // d and z get the more specific error
            match column {
                1 => return Err(Error::NonBinaryTreatment { row, value: values[1] }),
                2 => return Err(Error::NonBinaryInstrument { row, value: values[2] }),
                _ => return Err(Error::NonFiniteValue { row, column }),
            }
        }
        let d = binary(values[1]).ok_or(Error::NonBinaryTreatment { row, value: values[1] })?;
        let z = binary(values[2]).ok_or(Error::NonBinaryInstrument { row, value: values[2] })?;
        records.push(Observation {
            y: values[0],
            d,
            z,
            x: values[3..].to_vec(),
        });
    }
    Dataset::from_records(records, kinds.to_vec())
}

fn binary(v: f64) -> Option<u8> {
    if v == 0.0 {
        Some(0)
    } else if v == 1.0 {
        Some(1)
    } else {
        None
    }
}

fn check_kinds(kinds: &[CovariateKind]) -> Result<()> {
    let continuous = kinds
        .iter()
        .filter(|k| **k == CovariateKind::Continuous)
        .count();
    if continuous > 0 && kinds.len() > 1 {
        return Err(Error::UnsupportedCovariateMix(format!(
            "a continuous covariate must be the only covariate, got {} covariates",
            kinds.len()
        )));
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset from already-typed records, enforcing the same
    /// invariants as [`validate_dataset`].
    pub fn from_records(records: Vec<Observation>, kinds: Vec<CovariateKind>) -> Result<Dataset> {
        if records.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_kinds(&kinds)?;
        for (row, r) in records.iter().enumerate() {
            if r.x.len() != kinds.len() {
                return Err(Error::RaggedRow {
                    row,
                    found: 3 + r.x.len(),
                    expected: 3 + kinds.len(),
                });
            }
            if r.d > 1 {
                return Err(Error::NonBinaryTreatment { row, value: r.d as f64 });
            }
            if r.z > 1 {
                return Err(Error::NonBinaryInstrument { row, value: r.z as f64 });
            }
            if !r.y.is_finite() {
                return Err(Error::NonFiniteValue { row, column: 0 });
            }
            if let Some(c) = r.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row, column: 3 + c });
            }
        }
        let first = records[0].z;
        if records.iter().all(|r| r.z == first) {
            return Err(Error::DegenerateInstrument);
        }
        Ok(Dataset {
            records,
            covariate_kinds: kinds,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Observation {
        &self.records[i]
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kinds
    }

    pub fn branch(&self) -> Branch {
        match self.covariate_kinds.first() {
            Some(CovariateKind::Continuous) => Branch::Continuous,
            _ => Branch::Discrete,
        }
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn treatments(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d as f64).collect()
    }

    pub fn instruments(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.z).collect()
    }

    /// The scalar continuous covariate, if this is a continuous-branch dataset.
    pub fn scalar_covariate(&self) -> Option<Vec<f64>> {
        match self.branch() {
            Branch::Continuous => Some(self.records.iter().map(|r| r.x[0]).collect()),
            Branch::Discrete => None,
        }
    }

    /// Same data with instrument arms swapped.
    pub fn relabel_instrument(&self) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| Observation {
                z: 1 - r.z,
                ..r.clone()
            })
            .collect();
        Dataset {
            records,
            covariate_kinds: self.covariate_kinds.clone(),
        }
    }

    /// Same data with `shift` added to every outcome.
    pub fn shift_outcome(&self, shift: f64) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| Observation {
                y: r.y + shift,
                ..r.clone()
            })
            .collect();
        Dataset {
            records,
            covariate_kinds: self.covariate_kinds.clone(),
        }
    }

    /// Raw rows in `[y, d, z, x...]` layout.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![r.y, r.d as f64, r.z as f64];
                row.extend_from_slice(&r.x);
                row
            })
            .collect()
    }
}

/// Partition of records into discrete covariate cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellIndex {
    /// Distinct covariate vectors, lexicographically increasing.
    pub keys: Vec<Vec<f64>>,
    /// Cell of each record.
    pub cell_of: Vec<usize>,
}

impl CellIndex {
    pub fn new(dataset: &Dataset) -> CellIndex {
        let mut keys: Vec<Vec<f64>> = dataset.records.iter().map(|r| r.x.clone()).collect();
        keys.sort_by(|a, b| lex_cmp(a, b));
        keys.dedup_by(|a, b| lex_cmp(a, b) == Ordering::Equal);
        let cell_of = dataset
            .records
            .iter()
            .map(|r| {
                keys.binary_search_by(|k| lex_cmp(k, &r.x))
                    .expect("every record's key is present")
            })
            .collect();
        CellIndex { keys, cell_of }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn find(&self, key: &[f64]) -> Option<usize> {
        self.keys.binary_search_by(|k| lex_cmp(k, key)).ok()
    }

    /// Record indices of each cell, split by instrument arm: `members[cell][z]`.
    pub fn arm_members(&self, dataset: &Dataset) -> Vec<[Vec<usize>; 2]> {
        let mut members = vec![[Vec::new(), Vec::new()]; self.len()];
        for (i, r) in dataset.records.iter().enumerate() {
            members[self.cell_of[i]][r.z as usize].push(i);
        }
        members
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

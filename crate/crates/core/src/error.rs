use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error surfaced in, attached by [`crate::run_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    FirstStage,
    Transform,
    Grid,
    Statistic,
    Influence,
    Bootstrap,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::FirstStage => "first stage",
            Stage::Transform => "outcome transform",
            Stage::Grid => "grid construction",
            Stage::Statistic => "test statistic",
            Stage::Influence => "influence functions",
            Stage::Bootstrap => "multiplier bootstrap",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has no rows")]
    EmptyInput,
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("row {row}: treatment must be 0 or 1, got {value}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("row {row}: instrument must be 0 or 1, got {value}")]
    NonBinaryInstrument { row: usize, value: f64 },
    #[error("row {row}, column {column}: non-finite value")]
    NonFiniteValue { row: usize, column: usize },
    #[error("instrument takes a single value; both arms are required")]
    DegenerateInstrument,
    #[error("unsupported covariate layout: {0}")]
    UnsupportedCovariateMix(String),

    #[error("sample has zero spread; bandwidth is degenerate")]
    DegenerateBandwidth,
    #[error("evaluation range collapses to the single point {0}")]
    DegenerateRange(f64),
    #[error("no record other than {index} in instrument arm {arm}")]
    EmptyArm { index: usize, arm: u8 },
    #[error("kernel weights sum to zero")]
    ZeroWeightSum,
    #[error("covariate cell {cell:?} has no records in instrument arm {arm}")]
    EmptyCell { cell: Vec<f64>, arm: u8 },
    #[error("weak instrument at {location}: propensity gap {gap} within tolerance {tol}")]
    WeakInstrument {
        location: String,
        gap: f64,
        tol: f64,
    },
    #[error("no first-stage estimate for covariate value {0:?}")]
    MissingCell(Vec<f64>),
    #[error("conditional ECDF over an empty subset")]
    EmptyMask,
    #[error("density estimate for record {index} in arm {arm} is {value}, at or below the floor")]
    DensityFloor { index: usize, arm: u8, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the failure is a property of the sample (weak instrument,
    /// empty cells) rather than malformed input.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self.root(),
            Error::WeakInstrument { .. }
                | Error::EmptyCell { .. }
                | Error::EmptyArm { .. }
                | Error::ZeroWeightSum
                | Error::DensityFloor { .. }
                | Error::DegenerateBandwidth
                | Error::DegenerateRange(_)
        )
    }

    /// Process exit code: 2 input/validation, 3 statistical degeneracy, 4 internal.
    pub fn exit_code(&self) -> i32 {
        if self.is_degeneracy() {
            return 3;
        }
        match self.root() {
            Error::DimensionMismatch { .. } | Error::MissingCell(_) | Error::EmptyMask => 4,
            _ => 2,
        }
    }

    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::AtStage {
            stage,
            source: Box::new(source),
        }
    }
}

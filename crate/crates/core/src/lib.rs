//! Tests for unobserved treatment effect heterogeneity with a binary
//! instrument and a binary treatment.
//!
//! The pipeline is: first-stage LATE estimates, the constructed outcome
//! `Ŵ = Y + (1 − D)·δ̂(X)`, a KS-type statistic comparing the distribution of
//! `Ŵ` across instrument arms, and multiplier-bootstrap critical values.

pub mod bootstrap;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod grid;
pub mod influence;
pub mod io;
pub mod kernel;
pub mod ks_continuous;
pub mod ks_discrete;
pub mod late;
pub mod monte_carlo;
pub mod runner;
pub mod seed;

pub use bootstrap::{bootstrap, critical_value, p_value, BootstrapDraws, MultiplierDistribution, MultiplierSpec};
pub use dataset::{validate_dataset, Branch, CovariateKind, Dataset, Observation};
pub use dgp::{gen_dgp, DgpId, DgpSpec};
pub use error::{Error, Result};
pub use grid::{make_grid, Grid, SupPoints, XAxis};
pub use influence::InfluenceMatrix;
pub use io::{read_csv, write_report, ColumnMap, Format};
pub use kernel::KernelSpec;
pub use ks_continuous::{PhiSign, PsiForm};
pub use monte_carlo::{monte_carlo, monte_carlo_table, DecisionRule, Experiment, RejectionTable};
pub use runner::{run_test, BranchChoice, RunConfig, TestReport};

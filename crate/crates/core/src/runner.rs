//! End-to-end test orchestration: first stage, `Ŵ`, statistic, influence
//! matrix, bootstrap, and the report.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, critical_value, p_value, DrawSummary, MultiplierSpec};
use crate::dataset::{Branch, CellIndex, Dataset};
use crate::error::{Error, Result, Stage};
use crate::grid::{make_grid, AxisGrid, Grid, SupPoints, XAxis};
use crate::kernel::KernelSpec;
use crate::ks_continuous::{
    influence_continuous, ks_statistic_continuous_with, ContinuousOptions, GFunctional, PhiSign,
    PsiForm, DEFAULT_Q_FLOOR,
};
use crate::ks_discrete::{influence_discrete, ks_statistic_discrete_with, DiscreteOptions};
use crate::late::{construct_w, delta_continuous, delta_discrete, DEFAULT_RELEVANCE_TOL};

/// Levels always reported.
pub const STANDARD_ALPHAS: [f64; 3] = [0.01, 0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchChoice {
    /// Follow the dataset's covariate kinds.
    Auto,
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub branch: BranchChoice,
    pub grid_w: usize,
    /// Covariate grid size; continuous branch only.
    pub grid_x: usize,
    pub sup_points: SupPoints,
    pub kernel: KernelSpec,
    pub multiplier: MultiplierSpec,
    /// Extra significance levels on top of [`STANDARD_ALPHAS`].
    pub alphas: Vec<f64>,
    pub relevance_tol: f64,
    pub q_floor: f64,
    pub phi_sign: PhiSign,
    pub psi_form: PsiForm,
    pub truncate_kappa: bool,
    /// Worker threads; `None` uses the ambient pool.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            branch: BranchChoice::Auto,
            grid_w: 100,
            grid_x: 100,
            sup_points: SupPoints::Grid,
            kernel: KernelSpec::default(),
            multiplier: MultiplierSpec::default(),
            alphas: STANDARD_ALPHAS.to_vec(),
            relevance_tol: DEFAULT_RELEVANCE_TOL,
            q_floor: DEFAULT_Q_FLOOR,
            phi_sign: PhiSign::Population,
            psi_form: PsiForm::Projection,
            truncate_kappa: false,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_w < 2 || self.grid_x < 2 {
            return Err(Error::InvalidConfig("grid sizes must be at least 2".into()));
        }
        if self.multiplier.reps == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
        }
        if let Some(&a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidAlpha(a));
        }
        if !(self.relevance_tol > 0.0) {
            return Err(Error::InvalidConfig("relevance_tol must be positive".into()));
        }
        if !(self.q_floor > 0.0) {
            return Err(Error::InvalidConfig("q_floor must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        self.kernel.validate()
    }

    /// Standard levels plus configured ones, ascending and deduplicated.
    pub fn resolved_alphas(&self) -> Vec<f64> {
        let mut all: Vec<f64> = STANDARD_ALPHAS.iter().chain(&self.alphas).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub value: f64,
    pub reject: bool,
}

/// Smoothing parameters actually used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Regressions on `X` (continuous) or the `Ŵ` density (discrete).
    pub primary: f64,
    /// `q̂` bandwidth; continuous only.
    pub density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub branch: Branch,
    pub statistic: f64,
    pub p_value: f64,
    /// Ascending in `alpha`.
    pub critical_values: Vec<CriticalValue>,
    pub n: usize,
    pub bootstrap_reps: usize,
    /// `(|w|, |x|)`.
    pub grid_sizes: (usize, usize),
    pub bandwidths: Bandwidths,
    pub draws: DrawSummary,
    pub seed: u64,
    pub config: RunConfig,
}

impl TestReport {
    pub fn critical_value(&self, alpha: f64) -> Option<f64> {
        self.critical_values
            .iter()
            .find(|c| c.alpha == alpha)
            .map(|c| c.value)
    }

    /// `p ≤ α`, which agrees with `T̂ > ĉ(α)` unless `T̂` ties a draw.
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Runs the test selected by `config.branch` on `dataset`.
pub fn run_test(dataset: &Dataset, config: &RunConfig) -> Result<TestReport> {
    config.validate()?;
    match config.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(dataset, config))
        }
        None => run_inner(dataset, config),
    }
}

fn resolve_branch(dataset: &Dataset, choice: BranchChoice) -> Result<Branch> {
    let native = dataset.branch();
    let wanted = match choice {
        BranchChoice::Auto => native,
        BranchChoice::Discrete => Branch::Discrete,
        BranchChoice::Continuous => Branch::Continuous,
    };
    if wanted != native {
        return Err(Error::InvalidConfig(format!(
            "requested {wanted:?} test on {native:?} covariates"
        )));
    }
    Ok(wanted)
}

fn axis(values: &[f64], count: usize) -> Result<AxisGrid> {
    let g = make_grid(values, count)?;
    if g.degenerate {
        return Err(Error::DegenerateRange(g.points[0]));
    }
    Ok(g)
}

struct Stat {
    statistic: f64,
    influence: crate::influence::InfluenceMatrix,
    grid: Grid,
    bandwidths: Bandwidths,
}

fn discrete_stat(dataset: &Dataset, config: &RunConfig) -> Result<Stat> {
    let table = delta_discrete(dataset, config.relevance_tol).map_err(Error::at(Stage::FirstStage))?;
    let w_hat = construct_w(dataset, &table).map_err(Error::at(Stage::Transform))?;
    let grid = axis(&w_hat, config.grid_w)
        .and_then(|w| Grid::new(w.points, XAxis::Cells(CellIndex::new(dataset).keys)))
        .map_err(Error::at(Stage::Grid))?;
    let statistic = ks_statistic_discrete_with(dataset, &w_hat, &grid, config.sup_points).map_err(Error::at(Stage::Statistic))?;
    let h_w = config.kernel.bandwidth(&w_hat).map_err(Error::at(Stage::Influence))?;
    let opts = DiscreteOptions {
        relevance_tol: config.relevance_tol,
        density_bandwidth: h_w,
        truncate_kappa: config.truncate_kappa,
    };
    let influence = influence_discrete(dataset, &w_hat, &grid, opts).map_err(Error::at(Stage::Influence))?;
    Ok(Stat {
        statistic,
        influence,
        grid,
        bandwidths: Bandwidths {
            primary: h_w,
            density: None,
        },
    })
}

fn continuous_stat(dataset: &Dataset, config: &RunConfig) -> Result<Stat> {
    let series = delta_continuous(dataset, &config.kernel, config.relevance_tol)
        .map_err(Error::at(Stage::FirstStage))?;
    let h = series.bandwidth;
    let w_hat = construct_w(dataset, &series).map_err(Error::at(Stage::Transform))?;
    let x = dataset.scalar_covariate().unwrap_or_default();
    let grid = axis(&w_hat, config.grid_w)
        .and_then(|w| Ok((w, axis(&x, config.grid_x)?)))
        .and_then(|(w, xg)| Grid::new(w.points, XAxis::Points(xg.points)))
        .map_err(Error::at(Stage::Grid))?;
    let h_q = config.kernel.density_bandwidth(h);
    let gf = GFunctional::build(dataset, &w_hat, h_q).map_err(Error::at(Stage::Statistic))?;
    let statistic = ks_statistic_continuous_with(&gf, &grid, config.sup_points).map_err(Error::at(Stage::Statistic))?;
    let opts = ContinuousOptions {
        bandwidth: h,
        relevance_tol: config.relevance_tol,
        q_floor: config.q_floor,
        phi_sign: config.phi_sign,
        psi_form: config.psi_form,
        truncate_kappa: config.truncate_kappa,
    };
    let influence = influence_continuous(dataset, &gf, &grid, opts).map_err(Error::at(Stage::Influence))?;
    Ok(Stat {
        statistic,
        influence,
        grid,
        bandwidths: Bandwidths {
            primary: h,
            density: Some(h_q),
        },
    })
}

fn run_inner(dataset: &Dataset, config: &RunConfig) -> Result<TestReport> {
    let branch = resolve_branch(dataset, config.branch)?;
    let stat = match branch {
        Branch::Discrete => discrete_stat(dataset, config)?,
        Branch::Continuous => continuous_stat(dataset, config)?,
    };
    let draws = bootstrap(&stat.influence, &config.multiplier).map_err(Error::at(Stage::Bootstrap))?;
    let critical_values = config
        .resolved_alphas()
        .into_iter()
        .map(|alpha| {
            let value = critical_value(&draws, alpha)?;
            Ok(CriticalValue {
                alpha,
                value,
                reject: stat.statistic > value,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at(Stage::Bootstrap))?;
    Ok(TestReport {
        branch,
        statistic: stat.statistic,
        p_value: p_value(&draws, stat.statistic),
        critical_values,
        n: dataset.len(),
        bootstrap_reps: draws.len(),
        grid_sizes: stat.grid.sizes(),
        bandwidths: stat.bandwidths,
        draws: draws.summary(),
        seed: config.multiplier.seed,
        config: config.clone(),
    })
}

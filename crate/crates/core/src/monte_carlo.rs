//! Rejection-rate experiments over the simulation designs.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{gen_dgp, DgpId, DgpSpec};
use crate::error::{Error, Result};
use crate::runner::{run_test, RunConfig, TestReport};
use crate::seed::{derive_seed, Stream};

/// How a replicate's rejection at level `α` is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// `p ≤ α`.
    PValue,
    /// `T̂ > ĉ(α)`.
    CriticalValue,
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Aligned with the experiment's alphas.
    pub rejected: Vec<bool>,
}

/// Replicates of one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub spec: DgpSpec,
    pub alphas: Vec<f64>,
    pub replicates: Vec<Replicate>,
    /// `(replicate, message)` for replicates that errored.
    pub failures: Vec<(usize, String)>,
}

impl Experiment {
    pub fn completed(&self) -> usize {
        self.replicates.len()
    }

    /// Rejection share at `alpha` among completed replicates.
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        let k = self.alphas.iter().position(|&a| a == alpha)?;
        if self.replicates.is_empty() {
            return None;
        }
        let hits = self.replicates.iter().filter(|r| r.rejected[k]).count();
        Some(hits as f64 / self.replicates.len() as f64)
    }
}

/// Seeds for replicate `r` of an experiment with master seed `master`.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64) {
    (
        derive_seed(master, Stream::Data, r as u64),
        derive_seed(master, Stream::Bootstrap, r as u64),
    )
}

fn decide(report: &TestReport, alpha: f64, rule: DecisionRule) -> bool {
    match rule {
        DecisionRule::PValue => report.rejects_at(alpha),
        DecisionRule::CriticalValue => report
            .critical_values
            .iter()
            .find(|c| c.alpha == alpha)
            .is_some_and(|c| c.reject),
    }
}

/// Runs `reps` replicates of `spec`; `spec.seed` is the master seed.
pub fn monte_carlo(
    spec: &DgpSpec,
    reps: usize,
    config: &RunConfig,
    rule: DecisionRule,
) -> Result<Experiment> {
    if reps == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    spec.validate()?;
    config.validate()?;
    let alphas = config.resolved_alphas();
    let outcomes: Vec<std::result::Result<Replicate, String>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data_seed, boot_seed) = replicate_seeds(spec.seed, r);
            let mut cfg = config.clone();
            cfg.multiplier.seed = boot_seed;
            cfg.threads = None;
            let ds = gen_dgp(&DgpSpec {
                seed: data_seed,
                ..*spec
            })
            .map_err(|e| e.to_string())?;
            let report = run_test(&ds, &cfg).map_err(|e| e.to_string())?;
            Ok(Replicate {
                index: r,
                statistic: report.statistic,
                p_value: report.p_value,
                rejected: alphas.iter().map(|&a| decide(&report, a, rule)).collect(),
            })
        })
        .collect();
    let mut replicates = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => replicates.push(rep),
            Err(msg) => failures.push((r, msg)),
        }
    }
    Ok(Experiment {
        spec: *spec,
        alphas,
        replicates,
        failures,
    })
}

/// One `(design point, α)` rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub dgp: DgpId,
    pub n: usize,
    pub pz: f64,
    pub rho: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub rate: f64,
    pub completed: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
    pub reps: usize,
    pub bootstrap_reps: usize,
}

impl RejectionTable {
    pub fn from_experiments(experiments: &[Experiment], reps: usize, bootstrap_reps: usize) -> Self {
        let rows = experiments
            .iter()
            .flat_map(|e| {
                e.alphas.iter().map(move |&alpha| RejectionRow {
                    dgp: e.spec.id,
                    n: e.spec.n,
                    pz: e.spec.pz,
                    rho: e.spec.rho,
                    gamma: e.spec.gamma,
                    alpha,
                    rate: e.rate(alpha).unwrap_or(f64::NAN),
                    completed: e.completed(),
                    failures: e.failures.len(),
                })
            })
            .collect();
        RejectionTable {
            rows,
            reps,
            bootstrap_reps,
        }
    }

    pub fn total_failures(&self) -> usize {
        let mut seen = BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert((r.n, r.pz.to_bits(), r.rho.to_bits(), r.gamma.to_bits())))
            .map(|r| r.failures)
            .sum()
    }

    /// Wide layout: one line per `(N, p)`, one column per `(α, ρ)`.
    pub fn to_csv(&self) -> String {
        let sorted_unique = |f: &dyn Fn(&RejectionRow) -> f64| {
            let mut v: Vec<f64> = self.rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let alphas = sorted_unique(&|r| r.alpha);
        let rhos = sorted_unique(&|r| r.rho);
        let mut keys: Vec<(usize, f64)> = self.rows.iter().map(|r| (r.n, r.pz)).collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keys.dedup();

        let mut out = String::from("N,p");
        for a in &alphas {
            for r in &rhos {
                out.push_str(&format!(",alpha={a}|rho={r}"));
            }
        }
        out.push('\n');
        for (n, pz) in keys {
            out.push_str(&format!("{n},{pz}"));
            for &a in &alphas {
                for &rho in &rhos {
                    let cell = self
                        .rows
                        .iter()
                        .find(|r| r.n == n && r.pz == pz && r.alpha == a && r.rho == rho);
                    match cell {
                        Some(r) => out.push_str(&format!(",{:.4}", r.rate)),
                        None => out.push(','),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Experiments over the cross product of `ns × pzs × rhos`, sharing the
/// template's design, `γ`, and master seed.
pub fn monte_carlo_table(
    template: &DgpSpec,
    ns: &[usize],
    rhos: &[f64],
    pzs: &[f64],
    reps: usize,
    config: &RunConfig,
    rule: DecisionRule,
) -> Result<(RejectionTable, Vec<Experiment>)> {
    let mut experiments = Vec::new();
    for &n in ns {
        for &pz in pzs {
            for &rho in rhos {
                let spec = DgpSpec {
                    n,
                    pz,
                    rho,
                    ..*template
                };
                experiments.push(monte_carlo(&spec, reps, config, rule)?);
            }
        }
    }
    let table = RejectionTable::from_experiments(&experiments, reps, config.multiplier.reps);
    Ok((table, experiments))
}

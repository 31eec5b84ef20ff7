//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fails.

use std::time::Instant;

use hetfx::bootstrap::BootstrapDraws;
use hetfx::dataset::CellIndex;
use hetfx::ks_continuous::{ks_statistic_continuous, lambda, GFunctional};
use hetfx::ks_discrete::{conditional_ecdf, influence_discrete, ks_statistic_discrete, DiscreteOptions};
use hetfx::late::{construct_w, delta_continuous, delta_discrete};
use hetfx::{
    critical_value, gen_dgp, make_grid, monte_carlo, run_test, validate_dataset, CovariateKind,
    Dataset, DecisionRule, DgpId, DgpSpec, Experiment, Grid, KernelSpec, RunConfig, XAxis,
};

const ALPHA: f64 = 0.05;
const SEED: u64 = 1;

// criterion 1
const SIZE_D_REPS: usize = 400;
const SIZE_D_BOOT: usize = 500;
const SIZE_D_BAND: (f64, f64) = (0.015, 0.075);
// criterion 2
const POWER_D_REPS: usize = 200;
const POWER_D_MIN: f64 = 0.93;
// criterion 3
const MONO_GAMMAS: [f64; 3] = [0.1, 0.3, 0.5];
const MONO_SE: f64 = 3.0;
// criterion 4
const SIZE_C_REPS: usize = 200;
const SIZE_C_BOOT: usize = 300;
const SIZE_C_BAND: (f64, f64) = (0.005, 0.085);
// criterion 5
const POWER_C_N: usize = 2000;
const POWER_C_REPS: usize = 100;
const POWER_C_MIN: f64 = 0.09;
// criterion 6
const FS_SEEDS: u64 = 50;
const FS_MEDIAN_MAX: f64 = 0.15;
const FS_PAIRED_SHARE: f64 = 0.8;
// criterion 8
const ORACLE_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(boot: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.multiplier.reps = boot;
    c
}

fn experiment(id: DgpId, n: usize, gamma: f64, reps: usize, boot: usize) -> Experiment {
    let spec = DgpSpec::new(id, n, 0.7, gamma, 0.5, SEED);
    monte_carlo(&spec, reps, &config(boot), DecisionRule::PValue).expect("experiment runs")
}

fn rate(e: &Experiment) -> f64 {
    e.rate(ALPHA).expect("standard level")
}

fn describe(e: &Experiment) -> String {
    let mut s = format!("rate {:.4} over {} replicates", rate(e), e.completed());
    if !e.failures.is_empty() {
        s.push_str(&format!(", {} failed", e.failures.len()));
    }
    s
}

fn se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

fn discrete_size() -> Outcome {
    let e = experiment(DgpId::Dgp1, 1000, 0.0, SIZE_D_REPS, SIZE_D_BOOT);
    let r = rate(&e);
    outcome(
        e.failures.is_empty() && r >= SIZE_D_BAND.0 && r <= SIZE_D_BAND.1,
        format!("{}; need [{}, {}]", describe(&e), SIZE_D_BAND.0, SIZE_D_BAND.1),
    )
}

fn discrete_power(cache: &mut Vec<(f64, Experiment)>) -> Outcome {
    let e = experiment(DgpId::Dgp2, 1000, 0.5, POWER_D_REPS, SIZE_D_BOOT);
    let r = rate(&e);
    let detail = format!("{}; need >= {POWER_D_MIN}", describe(&e));
    cache.push((0.5, e));
    outcome(r >= POWER_D_MIN, detail)
}

fn power_monotone(cache: &mut Vec<(f64, Experiment)>) -> Outcome {
    let mut rates = Vec::new();
    for g in MONO_GAMMAS {
        let pos = cache.iter().position(|(c, _)| *c == g);
        let e = match pos {
            Some(k) => &cache[k].1,
            None => {
                cache.push((g, experiment(DgpId::Dgp2, 1000, g, POWER_D_REPS, SIZE_D_BOOT)));
                &cache.last().unwrap().1
            }
        };
        rates.push((rate(e), e.completed()));
    }
    let pass = rates.windows(2).all(|w| {
        let band = MONO_SE * (se(w[0].0, w[0].1).powi(2) + se(w[1].0, w[1].1).powi(2)).sqrt();
        w[1].0 >= w[0].0 - band
    });
    let shown: Vec<String> = MONO_GAMMAS
        .iter()
        .zip(&rates)
        .map(|(g, (r, _))| format!("gamma {g}: {r:.4}"))
        .collect();
    outcome(pass, shown.join(", "))
}

fn continuous_size() -> Outcome {
    let e = experiment(DgpId::Dgp3, 1000, 0.0, SIZE_C_REPS, SIZE_C_BOOT);
    let r = rate(&e);
    outcome(
        e.failures.is_empty() && r >= SIZE_C_BAND.0 && r <= SIZE_C_BAND.1,
        format!("{}; need [{}, {}]", describe(&e), SIZE_C_BAND.0, SIZE_C_BAND.1),
    )
}

fn continuous_power() -> Outcome {
    let alt = experiment(DgpId::Dgp4, POWER_C_N, 0.7, POWER_C_REPS, SIZE_C_BOOT);
    let null = experiment(DgpId::Dgp3, POWER_C_N, 0.0, POWER_C_REPS, SIZE_C_BOOT);
    let (ra, rn) = (rate(&alt), rate(&null));
    outcome(
        ra >= POWER_C_MIN && ra > rn,
        format!(
            "design 4 {}; matched design 3 rate {rn:.4}; need >= {POWER_C_MIN} and above the matched rate",
            describe(&alt)
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median over cells of `|δ̂(x) − x|`.
fn first_stage_error(n: usize, seed: u64) -> f64 {
    let ds = gen_dgp(&DgpSpec::new(DgpId::Dgp1, n, 0.7, 0.0, 0.5, seed)).expect("sample");
    let t = delta_discrete(&ds, 0.01).expect("first stage");
    median(t.cells.iter().map(|c| (c.delta - c.key[0]).abs()).collect())
}

fn first_stage() -> Outcome {
    let large: Vec<f64> = (0..FS_SEEDS).map(|s| first_stage_error(4000, 1000 + s)).collect();
    let small: Vec<f64> = (0..FS_SEEDS).map(|s| first_stage_error(1000, 1000 + s)).collect();
    let worst = large.iter().copied().fold(0.0, f64::max);
    let wins = large.iter().zip(&small).filter(|(a, b)| a < b).count();
    let share = wins as f64 / FS_SEEDS as f64;
    outcome(
        worst < FS_MEDIAN_MAX && share >= FS_PAIRED_SHARE,
        format!(
            "largest per-seed median error {worst:.4} (need < {FS_MEDIAN_MAX}); n=4000 beats n=1000 in {share:.2} of seeds (need >= {FS_PAIRED_SHARE})"
        ),
    )
}

fn check(failures: &mut Vec<String>, ok: bool, what: &str) {
    if !ok {
        failures.push(what.to_string());
    }
}

fn quick(boot: usize) -> RunConfig {
    let mut c = config(boot);
    c.grid_w = 40;
    c.grid_x = 20;
    c
}

fn w_hat_of(ds: &Dataset) -> Vec<f64> {
    match ds.covariate_kinds()[0] {
        CovariateKind::Discrete => construct_w(ds, &delta_discrete(ds, 0.01).unwrap()).unwrap(),
        CovariateKind::Continuous => {
            construct_w(ds, &delta_continuous(ds, &KernelSpec::default(), 0.01).unwrap()).unwrap()
        }
    }
}

fn properties() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..5u64 {
        let dd = gen_dgp(&DgpSpec::new(DgpId::Dgp2, 400, 0.7, 0.3, 0.5, seed)).unwrap();
        let dc = gen_dgp(&DgpSpec::new(DgpId::Dgp4, 300, 0.7, 0.3, 0.5, seed)).unwrap();
        let wd = w_hat_of(&dd);
        let wc = w_hat_of(&dc);

        let cells = CellIndex::new(&dd);
        let grid_d = Grid::new(make_grid(&wd, 60).unwrap().points, XAxis::Cells(cells.keys.clone())).unwrap();
        for arms in cells.arm_members(&dd) {
            let f: Vec<f64> = grid_d.w_points().iter().map(|&w| conditional_ecdf(&wd, &arms[0], w).unwrap()).collect();
            check(&mut bad, f.windows(2).all(|p| p[0] <= p[1]), "ecdf monotone");
        }

        let t = ks_statistic_discrete(&dd, &wd, &grid_d).unwrap();
        check(&mut bad, t >= 0.0 && t <= (dd.len() as f64).sqrt(), "statistic in [0, sqrt n]");

        let flipped = dd.relabel_instrument();
        let t_flip = ks_statistic_discrete(&flipped, &w_hat_of(&flipped), &grid_d).unwrap();
        check(&mut bad, t_flip == t, "relabel invariance (discrete)");

        let gf = GFunctional::build(&dc, &wc, 0.1).unwrap();
        let xs = make_grid(&gf.x, 8).unwrap().points;
        let grid_c = Grid::new(make_grid(&wc, 12).unwrap().points, XAxis::Points(xs.clone())).unwrap();
        let gf_flip = GFunctional::build(&dc.relabel_instrument(), &wc, 0.1).unwrap();
        check(
            &mut bad,
            ks_statistic_continuous(&gf_flip, &grid_c).unwrap() == ks_statistic_continuous(&gf, &grid_c).unwrap(),
            "relabel invariance (continuous)",
        );

        for z in 0..2u8 {
            for &x in &xs {
                let g: Vec<f64> = grid_c.w_points().iter().map(|&w| gf.g_hat(w, x, z)).collect();
                check(&mut bad, g.windows(2).all(|p| p[0] <= p[1]), "G monotone in w");
            }
            for &w in grid_c.w_points() {
                let g: Vec<f64> = xs.iter().map(|&x| gf.g_hat(w, x, z)).collect();
                check(&mut bad, g.windows(2).all(|p| p[0] <= p[1]), "G monotone in x");
            }
            // the difference quotient lies between the weighted sub-CDFs at its ends
            let sub_cdf = |w: f64, x: f64| {
                (0..gf.len())
                    .filter(|&i| gf.z[i] == z && gf.x[i] <= x && gf.w_hat[i] <= w)
                    .map(|i| gf.q[1 - z as usize][i])
                    .sum::<f64>()
                    / gf.len() as f64
            };
            let eps = 1e-3;
            for &w in grid_c.w_points() {
                let x = xs[xs.len() / 2];
                let fd = (gf.g_hat(w + eps, x, z) - gf.g_hat(w, x, z)) / eps;
                let slack = 1e-9 * (1.0 + gf.g_hat(w + eps, x, z).abs()) / eps;
                check(
                    &mut bad,
                    fd >= sub_cdf(w, x) - slack && fd <= sub_cdf(w + eps, x) + slack,
                    "G difference quotient vs weighted sub-CDF",
                );
            }
        }

        for t in [-2.0, -0.5, 0.0, 0.75, 3.0] {
            check(&mut bad, lambda(t) - lambda(-t) == -t && lambda(t) >= 0.0, "lambda identities");
        }

        let report = run_test(&dd, &quick(150)).unwrap();
        check(
            &mut bad,
            report.critical_values.windows(2).all(|c| c[0].value >= c[1].value),
            "critical values decrease in alpha",
        );
        check(
            &mut bad,
            report.critical_values.iter().all(|c| c.reject == report.rejects_at(c.alpha)),
            "p-value and critical-value decisions agree",
        );
    }

    // location shifts on a dyadic lattice leave every cell mean exact
    let rows: Vec<Vec<f64>> = (0..32)
        .map(|i| {
            let z = (i % 2) as f64;
            let d = if (i / 2) % 4 == 0 { 1.0 - z } else { z };
            vec![0.25 * (i % 7) as f64 + d, d, z, (1 + (i / 8) % 2) as f64]
        })
        .collect();
    let ds = validate_dataset(&rows, &[CovariateKind::Discrete]).unwrap();
    for shift in [1.0, -3.5, 16.0] {
        let a = delta_discrete(&ds, 0.01).unwrap();
        let b = delta_discrete(&ds.shift_outcome(shift), 0.01).unwrap();
        check(
            &mut bad,
            a.cells.iter().zip(&b.cells).all(|(u, v)| u.delta == v.delta),
            "delta shift invariance",
        );
    }

    for id in [DgpId::Dgp1, DgpId::Dgp3] {
        let ds = gen_dgp(&DgpSpec::new(id, 250, 0.7, 0.0, 0.5, 13)).unwrap();
        let runs: Vec<_> = [1usize, 2, 4]
            .iter()
            .map(|&k| {
                let mut c = quick(100);
                c.threads = Some(k);
                run_test(&ds, &c).unwrap()
            })
            .collect();
        let same = runs.iter().all(|r| {
            r.statistic.to_bits() == runs[0].statistic.to_bits()
                && r.p_value.to_bits() == runs[0].p_value.to_bits()
                && r.draws == runs[0].draws
        });
        check(&mut bad, same, "bit-identical across thread counts");
    }

    bad.sort();
    bad.dedup();
    let detail = if bad.is_empty() {
        "all properties hold".to_string()
    } else {
        format!("violated: {}", bad.join("; "))
    };
    outcome(bad.is_empty(), detail)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOL * (1.0 + b.abs())
}

fn hand_oracles() -> Outcome {
    let mut bad = Vec::new();
    let rows = vec![
        vec![1.0, 0.0, 0.0, 1.0],
        vec![2.0, 0.0, 0.0, 1.0],
        vec![3.0, 1.0, 0.0, 1.0],
        vec![4.0, 0.0, 1.0, 1.0],
        vec![5.0, 1.0, 1.0, 1.0],
        vec![6.0, 1.0, 1.0, 1.0],
    ];
    let ds = validate_dataset(&rows, &[CovariateKind::Discrete]).unwrap();
    let table = delta_discrete(&ds, 0.01).unwrap();
    check(&mut bad, close(table.cells[0].delta, 9.0), "six-row delta = 9");

    let sep = validate_dataset(
        &[[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]]
            .map(|r| r.to_vec()),
        &[CovariateKind::Discrete],
    )
    .unwrap();
    let w = sep.outcomes();
    let g = Grid::new(make_grid(&w, 5).unwrap().points, XAxis::Cells(vec![vec![1.0]])).unwrap();
    check(&mut bad, close(ks_statistic_discrete(&sep, &w, &g).unwrap(), 2.0), "small-gap statistic = 2");

    let draws = BootstrapDraws {
        sup_values: (1..=100).map(f64::from).collect(),
    };
    check(&mut bad, critical_value(&draws, 0.05).unwrap() == 95.0, "rank-95 critical value");

    let w_hat = construct_w(&ds, &table).unwrap();
    let grid = Grid::new(vec![4.0, 6.0, 10.5, 12.0], XAxis::Cells(vec![vec![1.0]])).unwrap();
    let opts = DiscreteOptions {
        relevance_tol: 0.01,
        density_bandwidth: 1.3,
        truncate_kappa: false,
    };
    let dense = influence_discrete(&ds, &w_hat, &grid, opts).unwrap().to_dense();
    let expect: [[f64; 4]; 6] = [
        [-0.33330364513199723, -0.9884533217801306, 2.7534816178194452, 0.7092302281103149],
        [-0.3332888010313292, -0.9826799826701957, 1.7968890933958341, 0.8971786754988058],
        [1.6665924461633266, 0.9711333044503263, -4.550370711215279, -0.6064089036091209],
        [0.33325911282999315, 0.9711333044503263, -3.8837040445486126, 0.7269244297242126],
        [0.33337786563533744, -0.9826799826701957, 2.4635557600625004, 0.2305120088321393],
        [0.3333630215346694, -0.9884533217801306, 1.4201482844861115, 0.04256356144364842],
    ];
    let matches = expect
        .iter()
        .zip(&dense)
        .all(|(e, g)| e.iter().zip(g).all(|(a, b)| close(*b, *a)));
    check(&mut bad, matches, "six-record influence matrix");

    let detail = if bad.is_empty() {
        "all oracles match".to_string()
    } else {
        format!("mismatch: {}", bad.join("; "))
    };
    outcome(bad.is_empty(), detail)
}

fn main() {
    let mut power_cache = Vec::new();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Vec<(f64, Experiment)>) -> Outcome>)> = vec![
        ("1 discrete size", Box::new(|_| discrete_size())),
        ("2 discrete power", Box::new(discrete_power)),
        ("3 power monotone in gamma", Box::new(power_monotone)),
        ("4 continuous size", Box::new(|_| continuous_size())),
        ("5 continuous power", Box::new(|_| continuous_power())),
        ("6 first-stage consistency", Box::new(|_| first_stage())),
        ("7 property suite", Box::new(|_| properties())),
        ("8 hand oracles", Box::new(|_| hand_oracles())),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run(&mut power_cache);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("[{tag}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

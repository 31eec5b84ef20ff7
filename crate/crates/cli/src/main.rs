use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetfx::io::{parse_covariates, write_dataset, Report};
use hetfx::kernel::BandwidthRule;
use hetfx::{
    gen_dgp, monte_carlo_table, read_csv, run_test, write_report, BranchChoice, ColumnMap,
    DecisionRule, DgpId, DgpSpec, Error, Format, MultiplierDistribution, PhiSign, PsiForm,
    RunConfig, SupPoints,
};

#[derive(Parser)]
#[command(name = "hetfx", version, about = "Tests for unobserved treatment effect heterogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the test on a CSV file.
    Test(TestArgs),
    /// Draw a sample from one of the simulation designs.
    Simulate(SimulateArgs),
    /// Rejection rates over a grid of designs.
    Mc(McArgs),
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    instrument: String,
    /// `NAME:kind` pairs, kind `discrete` or `continuous`.
    #[arg(long, default_value = "")]
    covariates: String,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = BranchArg::Auto)]
    branch: BranchArg,
    #[arg(long, default_value_t = 100)]
    grid_w: usize,
    #[arg(long, default_value_t = 100)]
    grid_x: usize,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra significance levels; 0.01, 0.05 and 0.10 are always reported.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, value_enum, default_value_t = MultiplierArg::Normal)]
    multiplier: MultiplierArg,
    /// Fixed bandwidth in place of the rule of thumb.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    bandwidth_scale: f64,
    /// Bandwidth of the covariate density weights (continuous test).
    #[arg(long)]
    q_bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value_t = SupArg::Grid)]
    sup_points: SupArg,
    #[arg(long, value_enum, default_value_t = PsiArg::Projection)]
    psi_form: PsiArg,
    #[arg(long, value_enum, default_value_t = PhiArg::Population)]
    phi_sign: PhiArg,
    #[arg(long)]
    truncate_kappa: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    dgp: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.7)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pz: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    dgp: u8,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.7")]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pz: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::PValue)]
    rule: RuleArg,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Auto,
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum MultiplierArg {
    Normal,
    Rademacher,
    Mammen,
}

#[derive(Clone, Copy, ValueEnum)]
enum SupArg {
    Grid,
    GridAndData,
}

#[derive(Clone, Copy, ValueEnum)]
enum PsiArg {
    Projection,
    Printed,
    Matched,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhiArg {
    Population,
    PaperEstimator,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    PValue,
    CriticalValue,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Format {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
            OutFormat::Text => Format::Text,
        }
    }
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        c.branch = match self.branch {
            BranchArg::Auto => BranchChoice::Auto,
            BranchArg::Discrete => BranchChoice::Discrete,
            BranchArg::Continuous => BranchChoice::Continuous,
        };
        c.grid_w = self.grid_w;
        c.grid_x = self.grid_x;
        c.multiplier.reps = self.bootstrap;
        c.multiplier.seed = self.seed;
        c.multiplier.distribution = match self.multiplier {
            MultiplierArg::Normal => MultiplierDistribution::StandardNormal,
            MultiplierArg::Rademacher => MultiplierDistribution::Rademacher,
            MultiplierArg::Mammen => MultiplierDistribution::Mammen,
        };
        c.alphas.extend(&self.alpha);
        if let Some(h) = self.bandwidth {
            c.kernel.bandwidth_rule = BandwidthRule::Fixed(h);
        }
        c.kernel.bandwidth_scale = self.bandwidth_scale;
        c.kernel.q_bandwidth = self.q_bandwidth;
        c.sup_points = match self.sup_points {
            SupArg::Grid => SupPoints::Grid,
            SupArg::GridAndData => SupPoints::GridAndData,
        };
        c.psi_form = match self.psi_form {
            PsiArg::Projection => PsiForm::Projection,
            PsiArg::Printed => PsiForm::Printed,
            PsiArg::Matched => PsiForm::Matched,
        };
        c.phi_sign = match self.phi_sign {
            PhiArg::Population => PhiSign::Population,
            PhiArg::PaperEstimator => PhiSign::PaperEstimator,
        };
        c.truncate_kappa = self.truncate_kappa;
        c
    }
}

fn sink(path: Option<&PathBuf>) -> hetfx::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<R: Report>(report: &R, format: OutFormat, path: Option<&PathBuf>) -> hetfx::Result<()> {
    let mut out = sink(path)?;
    write_report(report, format.into(), &mut out)?;
    out.flush()?;
    Ok(())
}

fn dgp(id: u8) -> DgpId {
    DgpId::try_from(id).expect("range checked by the parser")
}

fn run(cli: Cli) -> hetfx::Result<()> {
    match cli.command {
        Command::Test(a) => {
            let mut map = ColumnMap::new(&a.outcome, &a.treatment, &a.instrument);
            map.covariates = parse_covariates(&a.covariates)?;
            let data = read_csv(&a.input, &map)?;
            let report = run_test(&data, &a.run.config())?;
            emit(&report, a.format, a.output.as_ref())
        }
        Command::Simulate(a) => {
            let spec = DgpSpec::new(dgp(a.dgp), a.n, a.rho, a.gamma, a.pz, a.seed);
            let data = gen_dgp(&spec)?;
            let mut out = sink(a.out.as_ref())?;
            write_dataset(&data, &mut out)?;
            out.flush()?;
            Ok(())
        }
        Command::Mc(a) => {
            let template = DgpSpec::new(dgp(a.dgp), a.n[0], a.rho[0], a.gamma, a.pz[0], a.run.seed);
            let rule = match a.rule {
                RuleArg::PValue => DecisionRule::PValue,
                RuleArg::CriticalValue => DecisionRule::CriticalValue,
            };
            let (table, _) = monte_carlo_table(&template, &a.n, &a.rho, &a.pz, a.reps, &a.run.config(), rule)?;
            emit(&table, a.format, a.output.as_ref())?;
            let failed = table.total_failures();
            if failed > 0 {
                eprintln!("warning: {failed} replicates failed and were excluded from the rates");
            }
            Ok(())
        }
    }
}

/// Sizes the global pool from `HETFX_THREADS`; unset means all cores.
fn init_threads() -> hetfx::Result<()> {
    let Ok(raw) = std::env::var("HETFX_THREADS") else {
        return Ok(());
    };
    let k: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("HETFX_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = panic::catch_unwind(|| init_threads().and_then(|_| run(cli)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(4),
    }
}

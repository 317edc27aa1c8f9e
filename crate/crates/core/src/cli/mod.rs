//! The `elliptic-bias` command line: `fit`, `simulate` and `psi-table`.
//!
//! stdout carries tables, stderr diagnostics; the exit status is 0 on
//! success, 2 when some requested estimator did not converge, 1 on error.

mod data;
mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::estimation::{fit, EstimatorSet, FitOptions};
use crate::family::DensityFamily;
use crate::sim::{run_simulation, ModelKind, SimConfig, SimReport, THREADS_ENV};

pub use data::{load_model, parse_model};
pub use report::{psi_table_csv, psi_table_text, FitRecord, FitReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "elliptic-bias",
    version,
    about = "Bias-corrected and bias-reduced ML for elliptical regression models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to CSV data and report MLE, BC and BR estimates.
    Fit(FitArgs),
    /// Run a Monte Carlo bias/RMSE study from a config file and/or flags.
    Simulate(SimulateArgs),
    /// Print the radial moments ψ and derived constants per dimension q.
    PsiTable(PsiArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    /// normal, cauchy, student-t or power-exponential.
    #[arg(long, default_value = "normal")]
    pub family: String,
    /// Degrees of freedom of the Student t family.
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    /// Shape of the power exponential family.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

impl FamilyArgs {
    fn build(&self) -> Result<DensityFamily> {
        DensityFamily::from_name(&self.family, self.nu, self.lambda)
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the report here instead of stdout (stdout then gets the text table).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// nonlinear, linear, eiv, log-symmetric or mixed.
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Headered CSV; see the README for each model's columns.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated subset of mle,bc,br.
    #[arg(long, default_value = "mle,bc,br")]
    pub estimators: String,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML experiment file; flags override its entries.
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: the environment variable, else all cores).
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PsiArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 1)]
    pub q_min: usize,
    #[arg(long, default_value_t = 6)]
    pub q_max: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            code
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, out, err),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::PsiTable(a) => cmd_psi_table(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Writes the report to `--out` (or stdout) in the chosen format; with `--out`
/// the text table still goes to stdout.
fn emit(
    output: &OutputArgs,
    out: &mut dyn Write,
    text: &str,
    csv: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match &output.out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(
                std::fs::File::create(path)
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?,
            );
            match output.format {
                Format::Text => file.write_all(text.as_bytes())?,
                Format::Csv => csv(&mut file)?,
            }
            file.flush()?;
            out.write_all(text.as_bytes())?;
        }
        None => match output.format {
            Format::Text => out.write_all(text.as_bytes())?,
            Format::Csv => csv(out)?,
        },
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let family = a.family.build()?;
    let label = family.label();
    let model = load_model(a.model, &a.data, family)?;
    let mut opts = FitOptions::default().with_estimators(EstimatorSet::parse(&a.estimators)?);
    if let Some(t) = a.tol {
        opts.tol = t;
    }
    if let Some(m) = a.max_iter {
        opts.max_iter = m;
    }
    opts.validate()?;
    let res = fit(&model, &opts)?;
    for f in &res.failures {
        writeln!(err, "warning: {f}")?;
    }
    let report = FitReport::new(a.model.name(), &label, &res);
    emit(&a.output, out, &report.to_text(), |w| report.write_csv(w))?;
    if res.converged() {
        Ok(EXIT_OK)
    } else {
        let missing: Vec<&str> = res
            .requested
            .names()
            .into_iter()
            .filter(|n| !res.estimate(n).is_some_and(|e| e.converged))
            .collect();
        writeln!(err, "warning: not converged: {}", missing.join(", "))?;
        Ok(EXIT_PARTIAL)
    }
}

/// The experiment described by a config file plus command-line overrides.
pub fn simulation_config(a: &SimulateArgs) -> Result<SimConfig> {
    let mut cfg = match (&a.config, a.model) {
        (Some(path), _) => SimConfig::load(path)?,
        (None, Some(model)) => {
            let n = if a.n.is_empty() { vec![20] } else { a.n.clone() };
            SimConfig::new(model, "normal", n, 1000, SimConfig::DEFAULT_SEED)
        }
        (None, None) => return Err(Error::Config("simulate needs a config file or --model".into())),
    };
    if let Some(m) = a.model {
        if m != cfg.model {
            cfg.theta = None;
        }
        cfg.model = m;
    }
    if let Some(f) = &a.family {
        cfg.family = f.clone();
    }
    cfg.nu = a.nu.or(cfg.nu);
    cfg.lambda = a.lambda.or(cfg.lambda);
    if !a.n.is_empty() {
        cfg.n = a.n.clone();
    }
    cfg.reps = a.reps.unwrap_or(cfg.reps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.threads = a.threads.or(cfg.threads);
    if let Some(e) = &a.estimators {
        cfg.estimators = e.clone();
    }
    cfg.tol = a.tol.unwrap_or(cfg.tol);
    cfg.max_iter = a.max_iter.unwrap_or(cfg.max_iter);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = simulation_config(a)?;
    let report: SimReport = run_simulation(&cfg)?;
    emit(&a.output, out, &report.to_text(), |w| report.write_csv(w))?;
    Ok(EXIT_OK)
}

fn cmd_psi_table(a: &PsiArgs, out: &mut dyn Write) -> Result<i32> {
    if a.q_min == 0 || a.q_min > a.q_max {
        return Err(Error::Config(format!(
            "need 1 <= q-min <= q-max, got {}..{}",
            a.q_min, a.q_max
        )));
    }
    let family = a.family.build()?;
    let rows = (a.q_min..=a.q_max)
        .map(|q| family.derived_constants(q))
        .collect::<Result<Vec<_>>>()?;
    match a.format {
        Format::Text => out.write_all(psi_table_text(&family.label(), &rows).as_bytes())?,
        Format::Csv => psi_table_csv(&rows, out)?,
    }
    Ok(EXIT_OK)
}

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robustfit_cli::{
    cmd_asymptotics, cmd_fit, cmd_influence, cmd_simulate, read_input, CliError, CliResult,
    EstimatorKind, Family, FitArgs, FitMethod, Format, Grid, InfluenceArgs, InfluenceMethod,
    ModelKind, Output, Printer, SimulateArgs, Tuning, WeightKind,
};

/// Robust parametric fitting by weighted L2 distance and local likelihood.
#[derive(Debug, Parser)]
#[command(name = "robustfit", version)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value = "json")]
    format: Format,
    /// Significant digits in numeric output.
    #[arg(long, global = true, default_value_t = 6, value_parser = clap::value_parser!(u8).range(1..=17))]
    precision: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to CSV data.
    Fit(FitCmd),
    /// Tabulate an influence function on a grid.
    Influence(InfluenceCmd),
    /// Asymptotic variances at the normal model, closed form and by quadrature.
    Asymptotics(AsymptoticsCmd),
    /// Run a seeded Monte Carlo scenario.
    Simulate(SimulateCmd),
}

#[derive(Debug, Args)]
struct TuningFlags {
    /// L2 weight function.
    #[arg(long, value_enum, default_value = "constant")]
    weight: WeightKind,
    /// Exponent of the exp-delta weight, in [0, 1).
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Kernel centre.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Kernel bandwidth.
    #[arg(long)]
    h: Option<f64>,
    /// Local likelihood bandwidth as a multiple of the scale.
    #[arg(long, default_value_t = 2.0)]
    k: f64,
}

impl TuningFlags {
    fn tuning(&self) -> Tuning {
        Tuning {
            weight: self.weight,
            delta: self.delta,
            x0: self.x0,
            h: self.h,
            k: self.k,
        }
    }
}

#[derive(Debug, Args)]
struct FitCmd {
    /// CSV file; standard input when omitted or "-".
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "normal")]
    model: ModelKind,
    #[arg(long, value_enum)]
    method: FitMethod,
    #[command(flatten)]
    tuning: TuningFlags,
}

#[derive(Debug, Args)]
struct InfluenceCmd {
    #[arg(long, value_enum, default_value = "normal")]
    model: ModelKind,
    #[arg(long, value_enum)]
    method: InfluenceMethod,
    #[command(flatten)]
    tuning: TuningFlags,
    /// Parameter as MU,SIGMA.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_pair)]
    theta: (f64, f64),
    /// Grid as LO:HI:STEP.
    #[arg(long, allow_hyphen_values = true)]
    grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum FamilyKind {
    L2Delta,
    KlK,
    Ml,
}

#[derive(Debug, Args)]
struct AsymptoticsCmd {
    #[arg(long, value_enum)]
    family: FamilyKind,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    /// Dimension of the true normal model (identity-scaled covariance above 1).
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Estimators to run (comma-separated or repeated).
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    estimator: Vec<EstimatorKind>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    /// Bandwidth for mvn-kl.
    #[arg(long, default_value_t = 2.0)]
    h: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Point-mass contaminant location.
    #[arg(long, allow_hyphen_values = true)]
    contaminant_point: Option<f64>,
    /// Normal contaminant as MEAN,SD.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_pair)]
    contaminant_normal: Option<(f64, f64)>,
    /// Run replications on one thread.
    #[arg(long)]
    serial: bool,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated numbers, got '{s}'"))?;
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number"));
    Ok((num(a)?, num(b)?))
}

fn read_source(path: Option<&PathBuf>) -> CliResult<String> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::open(p).map_err(|e| CliError::Input(format!("cannot open {}: {e}", p.display())))?;
            read_input(f)
        }
        _ => read_input(io::stdin().lock()),
    }
}

fn run(cli: Cli) -> CliResult<Output> {
    let out = Printer {
        format: cli.format,
        precision: cli.precision as usize,
    };
    match cli.command {
        Command::Fit(c) => {
            let input = read_source(c.input.as_ref())?;
            let args = FitArgs {
                model: c.model,
                method: c.method,
                tuning: c.tuning.tuning(),
            };
            cmd_fit(&args, &input, &out)
        }
        Command::Influence(c) => {
            if c.model != ModelKind::Normal {
                return Err(CliError::Input("influence is available for --model normal only".into()));
            }
            let args = InfluenceArgs {
                method: c.method,
                tuning: c.tuning.tuning(),
                theta: c.theta,
                grid: c.grid,
            };
            cmd_influence(&args, &out)
        }
        Command::Asymptotics(c) => {
            let family = match c.family {
                FamilyKind::L2Delta => Family::L2Delta { delta: c.delta },
                FamilyKind::KlK => Family::KlK { k: c.k },
                FamilyKind::Ml => Family::Ml,
            };
            cmd_asymptotics(family, c.sigma, &out)
        }
        Command::Simulate(c) => {
            let args = SimulateArgs {
                dim: c.dim,
                mu: c.mu,
                sigma: c.sigma,
                n: c.n,
                reps: c.reps,
                seed: c.seed,
                estimators: c.estimator,
                delta: c.delta,
                k: c.k,
                h: c.h,
                epsilon: c.epsilon,
                contaminant_point: c.contaminant_point,
                contaminant_normal: c.contaminant_normal,
                serial: c.serial,
            };
            cmd_simulate(&args, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(out.text.as_bytes());
            let _ = stdout.flush();
            if out.exit_code == 2 {
                eprintln!("numerical failure: see report");
            } else if out.exit_code == 3 {
                eprintln!("self-check failed: closed form and quadrature disagree");
            }
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("robustfit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

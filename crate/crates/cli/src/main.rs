use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use conspinn::evaluation::Precision;
use conspinn::pde::PdeKind;
use conspinn::training::{ResidualMode, VariantTag};
use conspinn_cli::config::{ExperimentConfig, Overrides, Quantity};
use conspinn_cli::run;

#[derive(Parser)]
#[command(
    name = "conspinn",
    version,
    about = "PINN experiments with exact conservation projections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reference problem and write the dataset and c(t) series.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write dataset.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Train every configured model for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Evaluate trained models and write results.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Also estimate Hessian spectra.
        #[arg(long)]
        spectra: bool,
    },
    /// Train and evaluate pinn-sc over the configured penalty weights.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Estimate Hessian spectral densities of trained models.
    Spectra {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Jobs {
    /// Worker threads for training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print one line per finished run.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = kebab::<PdeKind>)]
    pde: Option<PdeKind>,
    #[arg(long, value_delimiter = ',', value_parser = kebab::<VariantTag>)]
    variants: Option<Vec<VariantTag>>,
    #[arg(long, value_delimiter = ',')]
    quantities: Option<Vec<Quantity>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    n_collocation: Option<usize>,
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long, value_parser = kebab::<ResidualMode>)]
    residual_mode: Option<ResidualMode>,
    #[arg(long, value_parser = kebab::<Precision>)]
    precision: Option<Precision>,
    /// Record wall-clock seconds in result tables.
    #[arg(long)]
    timing: bool,
    /// Keep every n-th grid point in each spatial direction.
    #[arg(long)]
    coarsen: Option<usize>,
    /// Number of time slices.
    #[arg(long)]
    nt: Option<usize>,
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> anyhow::Result<(ExperimentConfig, Vec<String>)> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        let changed = cfg.apply(&Overrides {
            pde: self.pde,
            variants: self.variants.clone(),
            quantities: self.quantities.clone(),
            seeds: self.seeds.clone(),
            lambda: self.lambda,
            lambdas: self.lambdas.clone(),
            output: self.output.clone(),
            grad_tol: self.grad_tol,
            max_epochs: self.max_epochs,
            n_collocation: self.n_collocation,
            n_data: self.n_data,
            residual_mode: self.residual_mode,
            precision: self.precision,
            timing: self.timing,
            coarsen: self.coarsen,
            nt: self.nt,
        });
        cfg.validate()?;
        for key in &changed {
            eprintln!("override: {key}");
        }
        Ok((cfg, changed))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let common = match &cli.command {
        Command::Generate { common, .. }
        | Command::Train { common, .. }
        | Command::Evaluate { common, .. }
        | Command::SweepLambda { common, .. }
        | Command::Spectra { common } => common,
    };
    let (cfg, changed) = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Generate { csv, .. } => run::generate(&cfg, &changed, *csv).map(|_| ()),
        Command::Train { jobs, .. } => run::train_all(&cfg, &changed, jobs.jobs, jobs.verbose),
        Command::Evaluate { spectra, .. } => run::evaluate_all(&cfg, &changed, *spectra),
        Command::SweepLambda { jobs, .. } => run::sweep_lambda(&cfg, &changed, jobs.jobs, jobs.verbose),
        Command::Spectra { .. } => run::spectra(&cfg, &changed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

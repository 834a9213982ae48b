mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_st::hybrid::Algorithm;

use crate::commands::CliError;
use crate::config::{RunConfig, Study};

/// Simulate data, fit latent Gaussian models and run the hybrid
/// random-forest corrections.
#[derive(Debug, Parser)]
#[command(name = "hybrid-st", version)]
struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for forests and CV folds.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset CSV written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    study: Option<Study>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset.
    Simulate {
        #[arg(long, value_enum)]
        study: Option<Study>,
    },
    /// Fit the base model on the training rows.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// `theta.json` of an earlier fit used as the optimizer start.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Run INLA-RF1 or INLA-RF2.
    Hybrid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        /// RF1: add the forest's OOB error to the observation variance.
        #[arg(long)]
        propagate: bool,
    },
    /// Spatio-temporal block cross-validation of the base model and both RF1 variants.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        time_groups: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s {
        "rf1" => Ok(Algorithm::Rf1),
        "rf2" => Ok(Algorithm::Rf2),
        _ => Err(format!("unknown algorithm {s:?} (expected rf1 or rf2)")),
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli, mut cfg: RunConfig) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate { study } => {
            if let Some(s) = study {
                cfg.simulation.study = s;
            }
            commands::simulate(&cfg)
        }
        Command::Fit { data, warm_start } => {
            let study = data.study.unwrap_or(cfg.simulation.study);
            commands::fit(&cfg, study, &data.data, warm_start.as_deref())
        }
        Command::Hybrid { data, algorithm, propagate } => {
            let study = data.study.unwrap_or(cfg.simulation.study);
            let mut hybrid = cfg.hybrid_for(study);
            if let Some(a) = algorithm {
                hybrid.algorithm = a;
            }
            hybrid.propagate_uncertainty |= propagate;
            cfg.hybrid = Some(hybrid);
            commands::hybrid(&cfg, study, &data.data)
        }
        Command::Cv { data, time_groups, clusters } => {
            let study = data.study.unwrap_or(cfg.simulation.study);
            if let Some(g) = time_groups {
                cfg.cv.time_groups = g;
            }
            if let Some(k) = clusters {
                cfg.cv.spatial_clusters = k;
            }
            cfg.validate().map_err(CliError::Config)?;
            commands::cv(&cfg, study, &data.data)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = build_config(&cli).and_then(|cfg| {
        let dir = cfg.output.dir.clone();
        run(cli, cfg).inspect_err(|e| {
            if matches!(e, CliError::Numerical(_)) {
                commands::write_diagnostics(&dir, e);
            }
        })
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

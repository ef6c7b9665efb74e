use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use winratio::inference::CiMethod;
use winratio_cli::commands::{cmd_bench, cmd_estimate, cmd_fit, cmd_simulate, write_bench, Overrides};
use winratio_cli::config::{MethodName, RunConfig};

#[derive(Parser)]
#[command(name = "winratio", version, about = "Win ratio and net benefit estimation for prioritized outcomes")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiFlag {
    Bootstrap,
    Gaussian,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate tau, WR and NB from a CSV file.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        /// complete, stratified, knn, optimal_match, ipw_nn, distreg or aipw.
        #[arg(long)]
        method: Option<MethodName>,
        #[arg(long, value_enum)]
        ci: Option<CiFlag>,
        /// Bootstrap replicates.
        #[arg(long)]
        boot: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON report path; stdout when absent from both flag and config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured nuisance models on the whole input and save them.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation study and write one CSV row per estimate.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time estimators on synthetic data of increasing size.
    Bench {
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "complete,knn")]
        estimators: Vec<MethodName>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("--threads: cannot configure the worker pool")?;
    }
    match cli.command {
        Command::Estimate {
            config,
            input,
            method,
            ci,
            boot,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            Overrides {
                input,
                method,
                ci: ci.map(|c| match c {
                    CiFlag::Bootstrap => Some(CiMethod::BootstrapPercentile),
                    CiFlag::Gaussian => Some(CiMethod::GaussianCounts),
                    CiFlag::None => None,
                }),
                boot,
                seed,
                out,
            }
            .apply(&mut cfg);
            let record = cmd_estimate(cfg)?;
            match &record.config.output {
                Some(p) => eprintln!("report written to {}", p.display()),
                None => println!("{}", serde_json::to_string_pretty(&record)?),
            }
            println!("{}", record.summary);
        }
        Command::Fit { config, input, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if input.is_some() {
                cfg.input = input;
            }
            cfg.output = Some(out.clone());
            cmd_fit(&cfg)?;
            eprintln!("models written to {}", out.display());
        }
        Command::Simulate { config, out } => {
            cmd_simulate(&config, &out)?;
        }
        Command::Bench {
            sizes,
            estimators,
            repeats,
            seed,
            out,
        } => {
            let rows = cmd_bench(&sizes, &estimators, repeats, seed)?;
            write_bench(&rows, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: run experiments from config files, generate data
//! or fit priors in isolation, and compare finished runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowmap::experiment::{
    compare_runs, load_config, run_experiment, run_fit_prior, run_gen_data, RunOptions,
    BUNDLED_CONFIGS,
};
use flowmap::Error;

#[derive(Parser)]
#[command(
    name = "flowmap",
    about = "Learn flow maps of dynamical systems from snapshot data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment: data, prior, training, prediction, analysis.
    Run {
        /// Config file path, or the name of a bundled config.
        config: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Generate and store the snapshot data for a config, nothing else.
    GenData {
        /// Config file path, or the name of a bundled config.
        config: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Generate data and fit/store the prior for a config, without training.
    FitPrior {
        /// Config file path, or the name of a bundled config.
        config: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Compare finished runs side by side (same system and lag).
    Compare {
        /// Two or more summary.json files or run directories.
        summaries: Vec<PathBuf>,
        /// Also write the comparison as CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled configs.
    List,
}

#[derive(clap::Args)]
struct CommonOpts {
    /// Output directory (overrides the config's choice).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's seeds with s, s+1, s+2 for a fresh replicate.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

impl CommonOpts {
    fn into_run_options(self) -> RunOptions {
        RunOptions {
            out: self.out,
            seed_override: self.seed_override,
            quiet: self.quiet,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        // The user can fix these by editing the config or command line.
        Error::Config(_) | Error::UnknownSystem(_) | Error::Format { .. } => 2,
        Error::Io(_) => 1,
        // Numerical failures: the run was set up correctly but did not survive.
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, opts } => load_config(&config)
            .and_then(|cfg| run_experiment(&cfg, &opts.into_run_options()))
            .map(|_| ()),
        Command::GenData { config, opts } => load_config(&config)
            .and_then(|cfg| run_gen_data(&cfg, &opts.into_run_options()))
            .map(|_| ()),
        Command::FitPrior { config, opts } => load_config(&config)
            .and_then(|cfg| run_fit_prior(&cfg, &opts.into_run_options()))
            .map(|_| ()),
        Command::Compare { summaries, out } => compare_runs(&summaries).and_then(|cmp| {
            print!("{}", cmp.console_table());
            if let Some(path) = out {
                cmp.write_csv(path)?;
            }
            Ok(())
        }),
        Command::List => {
            for (name, _) in BUNDLED_CONFIGS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

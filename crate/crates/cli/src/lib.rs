//! The `gnn-lab` command line: data generation, pretraining sweeps,
//! fingerprinting, probing, finetuning and analysis reports.
//!
//! Every command writes into `--out` (default `$GNN_LAB_OUT`, else
//! `gnn-lab-out`) and produces byte-identical files when re-run with the same
//! inputs and `--seed`.

pub mod analyze;
pub mod commands;
pub mod config;
mod error;
pub mod run;
pub mod sweep;
mod table;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gnn_lab::analysis::ScaleVariable;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gnn-lab", version, about = "Scaling experiments for molecular graph networks")]
pub struct Cli {
    /// Seed for commands that take one.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sweep runs executed at once.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Output directory.
    #[arg(long, global = true, env = "GNN_LAB_OUT", default_value = "gnn-lab-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Datagen {
        /// Generator settings (TOML); defaults with `--seed` when absent.
        config: Option<PathBuf>,
    },
    /// Run every point of an experiment manifest.
    Sweep { manifest: PathBuf },
    /// Pretrain one network.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract fingerprints from a checkpoint.
    Fingerprint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Graph-level taps; `graph_output_nn` when absent.
        #[arg(long, value_delimiter = ',')]
        taps: Vec<String>,
        #[arg(long)]
        model_id: Option<String>,
        /// Also write `<out>/planted`, the data plus a planted linear task of
        /// this name.
        #[arg(long)]
        plant: Option<String>,
    },
    /// Train probing heads on cached fingerprints.
    Probe {
        #[arg(long)]
        data: PathBuf,
        /// Caches probed one set at a time.
        #[arg(long, num_args = 1..)]
        fingerprints: Vec<PathBuf>,
        /// Caches concatenated into a single input.
        #[arg(long, num_args = 1..)]
        concat: Vec<PathBuf>,
        /// Graph-level tasks; all of them when absent.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finetune a trimmed copy of a pretrained network.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: String,
        /// Module the new head attaches to.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summaries, trends and power-law fits.
    Analyze {
        #[arg(long)]
        scaling: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Critical scale of the power-law fits.
        #[arg(long)]
        critical: Option<f64>,
        #[arg(long = "fit-axis", value_delimiter = ',')]
        fit_axes: Vec<ScaleVariable>,
    },
}

fn seeds_or(seeds: &[u64], seed: u64) -> Vec<u64> {
    if seeds.is_empty() {
        vec![seed]
    } else {
        seeds.to_vec()
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Datagen { config } => commands::datagen(config.as_deref(), cli.seed, out).map(drop),
        Command::Sweep { manifest } => {
            let m = config::ExperimentManifest::load(manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let target = m.output.as_ref().map_or_else(|| out.to_owned(), |o| out.join(o));
            let report = sweep::run_sweep(&m, base, &target, cli.jobs.into())?;
            if report.failures.is_empty() {
                Ok(())
            } else {
                let ids: Vec<&str> = report.failures.iter().map(|(id, _)| id.as_str()).collect();
                Err(CliError::runtime(format!(
                    "{} of {} sweep runs failed: {}",
                    ids.len(),
                    report.points.len(),
                    ids.join(", ")
                )))
            }
        }
        Command::Pretrain { data, config } => commands::pretrain(data, config, cli.seed, out).map(drop),
        Command::Fingerprint { checkpoint, data, taps, model_id, plant } => {
            let args = commands::FingerprintArgs {
                checkpoint,
                data,
                taps,
                model_id: model_id.as_deref(),
                plant: plant.as_deref(),
            };
            commands::fingerprint(&args, cli.seed, out).map(drop)
        }
        Command::Probe { data, fingerprints, concat, tasks, seeds, config } => {
            let seeds = seeds_or(seeds, cli.seed);
            let args =
                commands::ProbeArgs { data, fingerprints, concat, tasks, config: config.as_deref(), seeds: &seeds };
            commands::probe(&args, out)
        }
        Command::Finetune { checkpoint, data, task, module, seeds, config } => {
            let seeds = seeds_or(seeds, cli.seed);
            let args = commands::FinetuneArgs {
                checkpoint,
                data,
                task,
                module: module.as_deref(),
                config: config.as_deref(),
                seeds: &seeds,
            };
            commands::finetune(&args, out)
        }
        Command::Analyze { scaling, scores, critical, fit_axes } => {
            let args = analyze::AnalyzeArgs {
                scaling: scaling.as_deref(),
                scores: scores.as_deref(),
                critical: *critical,
                fit_axes,
            };
            analyze::analyze(&args, out)
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string().trim_end().to_owned()))?;
    run(&cli)
}

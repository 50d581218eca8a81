//! `arw` — batch front end for the adversarial robustness workbench.
//!
//! Subcommands: gen, train, advtrain, contrastive, attack, defend,
//! restore, bench, report. All paths are resolved relative to
//! `--workdir`; every output file carries a header line with the config
//! hash, seed and artifact version. ARW_SEED overrides config seeds.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arw", version, about = "adversarial robustness workbench")]
struct Cli {
    /// Base directory for all relative paths.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PPM images + CSV manifest).
    Gen(commands::GenArgs),
    /// Train a perception model on a generated dataset.
    Train(commands::TrainArgs),
    /// Adversarially train a model (min-max, or the mixed-set protocol).
    Advtrain(commands::AdvTrainArgs),
    /// Contrastive pre-training followed by supervised fine-tuning.
    Contrastive(commands::ContrastiveArgs),
    /// Run one attack over a dataset; writes attacked images + audit CSV.
    Attack(commands::AttackArgs),
    /// Apply an input-processing defense over a dataset.
    Defend(commands::DefendArgs),
    /// Restore attacked images with the diffusion-style loop.
    Restore(commands::RestoreArgs),
    /// Run the full attack-by-defense benchmark matrix from a config.
    Bench(commands::BenchArgs),
    /// Re-emit report.csv and report.md from a raw sidecar.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }
    let result = match cli.command {
        Command::Gen(args) => commands::cmd_gen(&cli.workdir, args),
        Command::Train(args) => commands::cmd_train(&cli.workdir, args),
        Command::Advtrain(args) => commands::cmd_advtrain(&cli.workdir, args),
        Command::Contrastive(args) => commands::cmd_contrastive(&cli.workdir, args),
        Command::Attack(args) => commands::cmd_attack(&cli.workdir, args),
        Command::Defend(args) => commands::cmd_defend(&cli.workdir, args),
        Command::Restore(args) => commands::cmd_restore(&cli.workdir, args),
        Command::Bench(args) => commands::cmd_bench(&cli.workdir, args),
        Command::Report(args) => commands::cmd_report(&cli.workdir, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

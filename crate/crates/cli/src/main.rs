//! Experiment runner for the fedforget simulator.
//!
//! Subcommands: `train` (FedAvg only), `unlearn` (train → poison → unlearn →
//! metrics), `overlap` (mixed-task ablation), `sweep` (hyper-parameter
//! study), `report` (aggregate CSVs into mean ± std tables).
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use fedforget::evaluation::{Arm, SweepParameter};
use fedforget::unlearning::FakeLabelKind;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fedforget", version, about = "Federated unlearning experiment runner")]
struct Cli {
    /// Parallel workers for trial fan-out (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (falls back to config output_dir, then "runs").
    #[arg(long, global = true, env = "FEDFORGET_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training only; writes per-round metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full pipeline: train, poison, unlearn, measure.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        /// Unlearning method.
        #[arg(long, value_enum)]
        arm: ArmArg,
        /// Override the configured fake-label kind.
        #[arg(long, value_enum)]
        label_kind: Option<LabelKindArg>,
        /// Override the configured target class.
        #[arg(long)]
        class: Option<usize>,
        /// Override the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Overlapping-validation ablation over all classes.
    Overlap {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one label kind (default: all four).
        #[arg(long, value_enum)]
        label_kind: Option<LabelKindArg>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Hyper-parameter sweep: one experiment per (value, trial).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated values to sweep.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Aggregate metrics CSVs into mean ± std tables.
    Report {
        /// CSV files or directories containing them.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum ArmArg {
    Fedaf,
    FedafC,
    Retrain,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Fedaf => Arm::Fedaf,
            ArmArg::FedafC => Arm::FedafC,
            ArmArg::Retrain => Arm::Retrain,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum LabelKindArg {
    Uniform,
    Random,
    Teacher,
    Debias,
}

impl From<LabelKindArg> for FakeLabelKind {
    fn from(k: LabelKindArg) -> Self {
        match k {
            LabelKindArg::Uniform => FakeLabelKind::Uniform,
            LabelKindArg::Random => FakeLabelKind::Random,
            LabelKindArg::Teacher => FakeLabelKind::Teacher,
            LabelKindArg::Debias => FakeLabelKind::DebiasTeacher,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum ParamArg {
    Lambda,
    #[value(name = "ewc_epochs", alias = "ewc-epochs")]
    EwcEpochs,
}

impl From<ParamArg> for SweepParameter {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Lambda => SweepParameter::Lambda,
            ParamArg::EwcEpochs => SweepParameter::EwcEpochs,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .ok();
    }
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = commands::resolve_out(cli.out, Some(&cfg));
            commands::train(&cfg, &out)
        }
        Command::Unlearn {
            config,
            arm,
            label_kind,
            class,
            trials,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = commands::resolve_out(cli.out, Some(&cfg));
            commands::unlearn(
                &cfg,
                arm.into(),
                label_kind.map(Into::into),
                class,
                trials,
                &out,
            )
        }
        Command::Overlap {
            config,
            label_kind,
            trials,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = commands::resolve_out(cli.out, Some(&cfg));
            let kinds = match label_kind {
                Some(kind) => vec![kind.into()],
                None => vec![
                    FakeLabelKind::Uniform,
                    FakeLabelKind::Random,
                    FakeLabelKind::Teacher,
                    FakeLabelKind::DebiasTeacher,
                ],
            };
            commands::overlap(&cfg, kinds, trials, &out)
        }
        Command::Sweep {
            config,
            param,
            values,
            trials,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = commands::resolve_out(cli.out, Some(&cfg));
            commands::run_sweep(&cfg, param.into(), values, trials, &out)
        }
        Command::Report { inputs } => {
            let text = report::render(&inputs)?;
            print!("{text}");
            if let Some(out) = cli.out {
                commands::ensure_out_dir(&out)?;
                std::fs::write(out.join("report.txt"), &text)?;
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::EntryFailures;

/// Micro-expression recognition pipeline: apex spotting, optical-flow
/// features, hierarchical transformer training and leave-one-subject-out
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "htnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Input {
    /// Sample manifest (CSV).
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the default run configuration.
    InitConfig {
        /// Directory for `config.json`; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic corpus (frames, landmarks, manifest).
    MakeSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Fill empty apex indices by histogram spotting.
    Spot {
        #[command(flatten)]
        input: Input,
        /// Directory for the updated manifest; defaults to the manifest's own.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute one composite flow map per sample.
    Extract {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train on every sample of the manifest.
    Train {
        #[command(flatten)]
        input: Input,
        /// Directory holding the extracted `.htfm` files.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Leave-one-subject-out evaluation.
    EvalLoso {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a summary of an evaluation report.
    Report {
        /// `report.json` written by `eval-loso`.
        report: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<htnet_core::Error>().is_some_and(htnet_core::Error::is_numerical)
            || e.downcast_ref::<EntryFailures>().is_some_and(EntryFailures::is_numerical)
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HTNET_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitConfig { out } => commands::init_config(out.as_deref()),
        Command::MakeSynth {
            out,
            seed,
            subjects,
            samples_per_class,
        } => commands::make_synth(&out, seed, subjects, samples_per_class),
        Command::Spot { input, out } => commands::spot(&input.manifest, input.config.as_deref(), out.as_deref()),
        Command::Extract { input, out, jobs } => {
            commands::extract(&input.manifest, input.config.as_deref(), &out, jobs)
        }
        Command::Train {
            input,
            features,
            out,
            seed,
        } => commands::train(&input.manifest, input.config.as_deref(), &features, &out, seed),
        Command::EvalLoso {
            input,
            features,
            out,
            seed,
            jobs,
        } => commands::eval_loso(&input.manifest, input.config.as_deref(), &features, &out, seed, jobs),
        Command::Report { report } => commands::report(&report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

//! `se3fm`: training, sampling and evaluation pipelines for backbone flow matching.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error, 4 numerical failure,
//! 1 anything else. Verbosity follows `SE3FM_LOG` (`error`, `warn`, `info`, `debug`).

mod commands;
mod config;
mod io;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use se3fm::sampling::Annealing;
use se3fm::ErrorCategory;

#[derive(Parser, Debug)]
#[command(name = "se3fm", version = run::VERSION, about = "SE(3) flow matching for protein backbones")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SampleFlags {
    /// Euler steps; overrides `sample.n_steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Rotation annealing scale, or `none`.
    #[arg(long)]
    pub anneal: Option<Annealing>,
    #[arg(long, default_value_t = 8)]
    pub n_samples: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in invariant checks.
    Selfcheck,
    /// Write a toy corpus of PDB files plus a manifest.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        length: usize,
        /// Comma-separated `kind:count` pairs; kinds are helix, sheet, hairpin, mixed.
        #[arg(long, default_value = "helix:64,hairpin:64")]
        kinds: String,
        /// Fraction of entries labelled synthetic (with pLDDT in the B-factor column).
        #[arg(long, default_value_t = 0.0)]
        synthetic_fraction: f64,
        /// Draw sequences from structure-specific residue pools.
        #[arg(long)]
        propensity: bool,
        /// Torsion jitter, degrees.
        #[arg(long, default_value_t = 3.0)]
        jitter: f64,
    },
    /// Filter a manifest; writes the accepted manifest and a report.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optimizer steps; overrides `train.max_steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Keep the sequence embedding table at its initial values.
        #[arg(long)]
        freeze_seq_encoder: bool,
        /// Condition on the per-entry embedding files named in the manifest's fifth column.
        #[arg(long)]
        external_embeddings: bool,
    },
    /// Reward-filtered fine-tuning on a directory of generated samples.
    Reft {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Unconditional generation.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        length: usize,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Sequence-conditioned structure prediction.
    Fold {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence file: `>name` header lines followed by one-letter codes.
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Embedding matrix for the (single) sequence.
        #[arg(long)]
        external_embeddings: Option<PathBuf>,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Motif scaffolding: the motif PDB is held fixed at the given positions.
    Scaffold {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        motif: PathBuf,
        /// Target positions of the motif residues, e.g. `4-9,20-23`.
        #[arg(long)]
        motif_indices: String,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: SampleFlags,
    },
    /// Evaluate a directory of samples; refolds live in `<refolds>/<sample id>/refold_<k>.pdb`.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        refolds: Option<PathBuf>,
        /// Manifest of reference structures for novelty.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Motif positions for motif-aware success.
        #[arg(long)]
        motif_indices: Option<String>,
    },
}

/// An error with a fixed exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: 3,
            msg: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError {
            code: 4,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<se3fm::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Selfcheck => commands::selfcheck(g),
        Command::ToyCorpus {
            out,
            length,
            kinds,
            synthetic_fraction,
            propensity,
            jitter,
        } => commands::toy_corpus(g, &out, length, &kinds, synthetic_fraction, propensity, jitter),
        Command::Filter { manifest, out } => commands::filter(g, &manifest, &out),
        Command::Train {
            manifest,
            out,
            steps,
            freeze_seq_encoder,
            external_embeddings,
        } => commands::train(g, &manifest, &out, steps, freeze_seq_encoder, external_embeddings),
        Command::Reft {
            checkpoint,
            samples,
            out,
            steps,
        } => commands::reft(g, &checkpoint, &samples, &out, steps),
        Command::Sample {
            checkpoint,
            out,
            length,
            flags,
        } => commands::sample(g, &checkpoint, &out, length, &flags),
        Command::Fold {
            checkpoint,
            sequences,
            out,
            external_embeddings,
            flags,
        } => commands::fold(g, &checkpoint, &sequences, &out, external_embeddings.as_deref(), &flags),
        Command::Scaffold {
            checkpoint,
            motif,
            motif_indices,
            length,
            out,
            flags,
        } => commands::scaffold(g, &checkpoint, &motif, &motif_indices, length, &out, &flags),
        Command::Eval {
            samples,
            out,
            refolds,
            reference,
            motif_indices,
        } => commands::eval(
            g,
            &samples,
            &out,
            refolds.as_deref(),
            reference.as_deref(),
            motif_indices.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SE3FM_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

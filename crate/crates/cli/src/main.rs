//! `r1lab`: generate the synthetic task, run the three training regimes,
//! evaluate checkpoints and score external transcripts.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use r1lab_core::Error;

#[derive(Debug, Parser)]
#[command(name = "r1lab", version, about = "Verifiable-reward GRPO on a synthetic emotion-recognition task")]
pub struct Cli {
    /// JSON config with optional `data` and `trainer` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    SftReasoning,
    SftAnswerOnly,
    Rlvr,
}

impl Mode {
    fn default_name(self) -> &'static str {
        match self {
            Mode::SftReasoning => "emer_sft",
            Mode::SftAnswerOnly => "direct_sft",
            Mode::Rlvr => "rlvr",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the three dataset splits and both demonstration sets.
    GenData,
    /// Train one regime and write a checkpoint plus its log.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Starting checkpoint (required for rlvr unless --from-scratch).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Allow rlvr to start from the uniform policy.
        #[arg(long)]
        from_scratch: bool,
        /// Checkpoint name; defaults to emer_sft, direct_sft or rlvr.
        #[arg(long)]
        name: Option<String>,
    },
    /// Evaluate checkpoints on id_test and ood_test.
    Eval {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Also evaluate the uniform zero-weight policy as `base`.
        #[arg(long)]
        with_base: bool,
    },
    /// Score an external JSONL file of `{id, transcript, label}` records.
    Score {
        transcripts: PathBuf,
        /// JSON object mapping alias to canonical label.
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Rebuild the comparison table from the reports of earlier evals.
    Report {
        #[arg(required = true)]
        eval_dirs: Vec<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Compatibility(_) => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("R1LAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Argument(format!("R1LAB_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Argument(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// DropAttack experiments: training, sweeps, scaling studies, landscape
/// scans, first-order checks and gradient checks.
#[derive(Debug, Parser)]
#[command(name = "dropattack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every configured seed (or just --seed) and save metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Fill the metrics `seconds` column (makes the CSV run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Mean/std test accuracy over an epsilon x p x K grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// TOML file with `epsilons`, `ps` and `ks` lists.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Standard vs DropAttack accuracy on nested training subsets.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Test loss on a 2D slice around a checkpoint.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Gap between the adversarial objective and its first-order surrogate.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every op and architecture.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Dataset generators.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Write a synthetic dataset as CSV.
    Gen {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// two-moons noise.
        #[arg(long, default_value_t = 0.25)]
        noise: f64,
        /// text vocabulary size.
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        /// text sequence length.
        #[arg(long, default_value_t = 12)]
        length: usize,
        #[arg(long, value_enum, default_value_t = Rule::Xor)]
        rule: Rule,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataKind {
    TwoMoons,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Rule {
    Xor,
    Order,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad config or arguments; exit 2.
    Config(String),
    Core(dropattack::Error),
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(dropattack::Error::Config(_)) => 2,
            CliError::Core(dropattack::Error::NumericalAbort { .. }) => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Other(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<dropattack::Error> for CliError {
    fn from(e: dropattack::Error) -> Self {
        CliError::Core(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, seed, timing } => commands::train(&common, seed, timing),
        Command::Sweep { common, grid } => commands::sweep(&common, &grid),
        Command::Scaling { common, sizes } => commands::scaling(&common, &sizes),
        Command::Landscape { common, checkpoint } => commands::landscape(&common, &checkpoint),
        Command::VerifyTheory { common } => commands::verify_theory(&common),
        Command::Gradcheck { seeds, step, out } => commands::gradcheck(seeds, step, &out),
        Command::Data {
            command:
                DataCommand::Gen {
                    kind,
                    out,
                    n,
                    seed,
                    noise,
                    vocab,
                    length,
                    rule,
                },
        } => {
            let rule = match rule {
                Rule::Xor => dropattack::data::TextRule::Xor,
                Rule::Order => dropattack::data::TextRule::Order,
            };
            let data = match kind {
                DataKind::TwoMoons => dropattack::data::gen_two_moons(n, noise, seed)?,
                DataKind::Text => dropattack::data::gen_text_synthetic(vocab, length, n, rule, seed)?,
            };
            commands::data_gen(&data, &out, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use posbias::ablation::AblationKind;
use posbias::harness::{run, Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "posbias", version, about = "Measure positional bias in text embedding models")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Embedding cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Restrict the run to one provider (preset, name or model id).
    #[arg(long, global = true)]
    provider: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and segment corpora.
    Ingest,
    /// Embed every document with every provider.
    Embed,
    /// Insertion and/or removal grid.
    Ablate {
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Per-document sentence regression.
    Decompose,
    /// Regression on shuffled sentence orders.
    ShuffleControl {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Truncation exposure and importance profiles.
    Exposure,
    /// Collect summaries and reference values.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Insert,
    Remove,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> posbias::Result<i32> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => return Err(posbias::Error::Config("--config is required".into())),
    };
    let (command, seed) = match cli.command {
        Cmd::Ingest => (Command::Ingest, cli.seed),
        Cmd::Embed => (Command::Embed, cli.seed),
        Cmd::Ablate { kind } => (
            Command::Ablate(kind.map(|k| match k {
                Kind::Insert => AblationKind::Insert,
                Kind::Remove => AblationKind::Remove,
            })),
            cli.seed,
        ),
        Cmd::Decompose => (Command::Decompose, cli.seed),
        Cmd::ShuffleControl { seed } => (Command::ShuffleControl, seed.or(cli.seed)),
        Cmd::Exposure => (Command::Exposure, cli.seed),
        Cmd::Report => (Command::Report, cli.seed),
    };
    config.apply(&Overrides {
        output_dir: cli.out,
        cache_dir: cli.cache,
        provider: cli.provider,
        seed,
    })?;
    let status = run(config, &command)?;
    Ok(status.exit_code())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use actrecon::config::{PipelineConfig, CONFIG_ENV};
use actrecon::pipeline::{self, Stage};
use actrecon::Error;

/// Reconstruct daily activity chains from mobile-phone records.
#[derive(Parser)]
#[command(name = "actrecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; defaults to $ACTRECON_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set lda.k=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker thread cap; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic world into <out>/synth.
    Synth,
    /// Clean traces and keep non-sparse days.
    Ingest,
    /// Detect stays per user.
    Stays,
    /// Label home, work and residents.
    Label,
    /// Build temporal profiles from check-ins.
    Profiles,
    /// Infer activity types for stays.
    Infer,
    /// Score reconstructed series against check-ins.
    Validate,
    /// Fit the activity topic model.
    Lda,
    /// Coherence over the configured prior and K grid.
    Sweep,
    /// Aggregate tables and distribution fits.
    Analytics,
    /// Every stage from ingest to analytics.
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Synth => Stage::Synth,
            Command::Ingest => Stage::Ingest,
            Command::Stays => Stage::Stays,
            Command::Label => Stage::Label,
            Command::Profiles => Stage::Profiles,
            Command::Infer => Stage::Infer,
            Command::Validate => Stage::Validate,
            Command::Lda => Stage::Lda,
            Command::Sweep => Stage::Sweep,
            Command::Analytics => Stage::Analytics,
            Command::All => Stage::All,
        }
    }
}

fn resolve(cli: &Cli) -> actrecon::Result<PipelineConfig> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let base = match path {
        Some(p) => PipelineConfig::load(&p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stage = Stage::from(cli.command);
    let result = resolve(&cli).and_then(|cfg| pipeline::run(stage, &cfg));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{}: {e}", stage.name());
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}

//! `symscreen`: synthesize or ingest a corpus, extract symptom mentions,
//! evaluate them, run the screening bench, and serve the adjudication API.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{CliConfig, CONFIG_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: flags, config, corpus files. Exit 1.
    Validation(String),
    /// Backend or I/O failure while doing the work. Exit 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Jsonl,
    Markdown,
}

#[derive(Debug, Parser)]
#[command(name = "symscreen", version, about = "Depressive-symptom extraction and screening over clinical notes")]
struct Cli {
    /// TOML config with data_dir, [defaults], [[backends]] and [service].
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Output format: human tables, JSON lines, or Markdown tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus with planted symptoms and gold labels.
    Synth(commands::SynthArgs),
    /// Validate a corpus directory and optionally install it for the service.
    Ingest(commands::IngestArgs),
    /// PHQ completion statistics by age bin.
    Stats(commands::StatsArgs),
    /// Run an extraction backend over every (note, category) pair.
    Extract(commands::ExtractArgs),
    /// Score detections against gold labels per category.
    Eval(commands::EvalArgs),
    /// Cross-validate screening classifiers on per-patient symptom vectors.
    Screen(commands::ScreenArgs),
    /// Serve the adjudication API and review UI.
    Serve(commands::ServeArgs),
    /// Inspect the symptom taxonomy.
    Taxonomy(TaxonomyArgs),
    /// Compact the service logs of a stopped service.
    Compact(commands::CompactArgs),
}

#[derive(Debug, Args)]
struct TaxonomyArgs {
    #[command(subcommand)]
    action: TaxonomyAction,
}

#[derive(Debug, Subcommand)]
enum TaxonomyAction {
    /// Print the 16 categories with their PHQ-9 questions and phrasings.
    Show,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let format = cli.format;
    match cli.command {
        Command::Synth(a) => commands::synth(a, &config, format),
        Command::Ingest(a) => commands::ingest(a, &config, format),
        Command::Stats(a) => commands::stats(a, format),
        Command::Extract(a) => commands::extract(a, &config, format),
        Command::Eval(a) => commands::eval(a, format),
        Command::Screen(a) => commands::screen(a, &config, format),
        Command::Serve(a) => commands::serve(a, &config),
        Command::Taxonomy(TaxonomyArgs { action: TaxonomyAction::Show }) => commands::taxonomy_show(format),
        Command::Compact(a) => commands::compact(a, &config, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line front end: `validate`, `highlight`, `summarize`, `report`.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 systemic
//! backend error, 4 partial failures above the configured threshold.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evidex_core::config::{CheckFailure, RunConfig};
use evidex_core::pipeline::{self, HighlightSource, PipelineError};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "evidex", version, about = "Risk-evidence extraction and summarization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check configuration, referenced files, templates and backend health.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Require every backend to be a mock.
        #[arg(long)]
        offline: bool,
        /// Skip backend and scorer reachability probes.
        #[arg(long)]
        skip_health: bool,
    },
    /// Extract grounded evidence highlights for every post.
    Highlight {
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        offline: bool,
    },
    /// Generate, score and select per-user evidence summaries.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        offline: bool,
        /// Run extraction first instead of reading highlight outputs.
        #[arg(long)]
        inline_extraction: bool,
    },
    /// Build the aggregate report from run outputs (and gold data, if any).
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory holding gold_highlights.jsonl / gold_summaries.jsonl.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        offline: bool,
    },
}

fn print_failures(failures: &[CheckFailure]) {
    for failure in failures {
        eprintln!("[{}] {}", failure.code, failure.message);
    }
}

fn load_and_check(config_path: &Path, offline: bool) -> Result<RunConfig, ExitCode> {
    let config = match RunConfig::load(config_path) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(EXIT_CONFIG));
        }
    };
    let failures = config.check_static(offline);
    if !failures.is_empty() {
        print_failures(&failures);
        return Err(ExitCode::from(EXIT_CONFIG));
    }
    Ok(config)
}

fn exit_for(error: &PipelineError) -> ExitCode {
    match error {
        PipelineError::Gateway(_) | PipelineError::Metrics(_) => ExitCode::from(EXIT_BACKEND),
        _ => ExitCode::from(EXIT_CONFIG),
    }
}

fn out_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.paths.output.clone())
}

async fn cmd_validate(config_path: &Path, offline: bool, skip_health: bool) -> ExitCode {
    let config = match RunConfig::load(config_path) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut failures = config.check_static(offline);
    if skip_health {
        println!("health checks skipped");
    } else {
        failures.extend(pipeline::check_health(&config).await);
    }
    if failures.is_empty() {
        println!("configuration valid");
        ExitCode::SUCCESS
    } else {
        print_failures(&failures);
        eprintln!("{} check(s) failed", failures.len());
        ExitCode::from(EXIT_CONFIG)
    }
}

async fn cmd_highlight(config_path: &Path, out: Option<PathBuf>, offline: bool) -> ExitCode {
    let config = match load_and_check(config_path, offline) {
        Ok(config) => config,
        Err(code) => return code,
    };
    let dir = out_dir(&config, out);
    match pipeline::run_highlight(&config, &dir).await {
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
        Ok(outcome) => {
            println!(
                "processed {} posts over {} users ({} rejected records)",
                outcome.corpus_stats.total_posts,
                outcome.corpus_stats.total_users,
                outcome.rejected_records
            );
            println!("outputs written to {}", dir.display());
            if outcome.failure_rate > config.failure_threshold {
                eprintln!(
                    "post failure rate {:.3} exceeds threshold {:.3}",
                    outcome.failure_rate, config.failure_threshold
                );
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
    }
}

async fn cmd_summarize(
    config_path: &Path,
    out: Option<PathBuf>,
    offline: bool,
    inline_extraction: bool,
) -> ExitCode {
    let config = match load_and_check(config_path, offline) {
        Ok(config) => config,
        Err(code) => return code,
    };
    let dir = out_dir(&config, out);
    let source = if inline_extraction {
        HighlightSource::Inline
    } else {
        HighlightSource::FromFiles
    };
    match pipeline::run_summarize(&config, &dir, source).await {
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
        Ok(outcome) => {
            println!(
                "selected summaries for {}/{} users",
                outcome.stats.users_selected, outcome.stats.users_total
            );
            for (backend, count) in &outcome.stats.winner_tally {
                println!("  {backend}: {count} winners");
            }
            println!("outputs written to {}", dir.display());
            if outcome.failure_rate > config.failure_threshold {
                eprintln!(
                    "user failure rate {:.3} exceeds threshold {:.3}",
                    outcome.failure_rate, config.failure_threshold
                );
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
    }
}

async fn cmd_report(
    config_path: &Path,
    out: Option<PathBuf>,
    gold: Option<PathBuf>,
    offline: bool,
) -> ExitCode {
    let config = match load_and_check(config_path, offline) {
        Ok(config) => config,
        Err(code) => return code,
    };
    let dir = out_dir(&config, out);
    match pipeline::run_report(&config, &dir, gold.as_deref()).await {
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
        Ok(report) => {
            print!("{}", evidex_core::report::render_text(&report));
            println!("report written to {}", dir.join("report.txt").display());
            ExitCode::SUCCESS
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Validate {
            config,
            offline,
            skip_health,
        } => cmd_validate(&config, offline, skip_health).await,
        Command::Highlight {
            config,
            out,
            offline,
        } => cmd_highlight(&config, out, offline).await,
        Command::Summarize {
            config,
            out,
            offline,
            inline_extraction,
        } => cmd_summarize(&config, out, offline, inline_extraction).await,
        Command::Report {
            config,
            out,
            gold,
            offline,
        } => cmd_report(&config, out, gold, offline).await,
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use genquery_core::corpus::CorpusStore;
use genquery_server::analyze::{analyze_log, render_table, to_json};
use genquery_server::{build_embedder, ServiceConfig};

#[derive(Parser)]
#[command(name = "genquery", version, about = "Generative visual search service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a JSON-lines image manifest into the corpus store.
    Ingest {
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Report search patterns from a session log.
    Analyze {
        log: PathBuf,
        /// Print only the JSON report.
        #[arg(long)]
        json: bool,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ServiceConfig, String> {
    let base = match path {
        Some(p) => ServiceConfig::from_file(p).map_err(|e| e.to_string())?,
        None => ServiceConfig::default(),
    };
    base.with_env().map_err(|e| e.to_string())
}

fn ingest(manifest: PathBuf, config: Option<PathBuf>) -> Result<(), String> {
    let config = load_config(config.as_ref())?;
    let embedder = build_embedder(&config.embedding);
    let store = CorpusStore::open_or_create(&config.corpus_path, embedder.dimension())
        .map_err(|e| e.to_string())?;
    let summary = store
        .ingest_manifest(&manifest, Some(&embedder))
        .map_err(|e| e.to_string())?;
    for skipped in &summary.skipped {
        eprintln!("skipped line {}: {:?}", skipped.line, skipped.reason);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?
    );
    Ok(())
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config: Option<PathBuf>) -> Result<(), String> {
    let config = load_config(config.as_ref())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime
        .block_on(genquery_server::run(config, shutdown_signal()))
        .map_err(|e| e.to_string())
}

fn analyze(log: PathBuf, json_only: bool) -> Result<(), String> {
    let analyses = analyze_log(&log).map_err(|e| e.to_string())?;
    if !json_only {
        for a in &analyses {
            print!("{}", render_table(a));
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&to_json(&analyses)).map_err(|e| e.to_string())?
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { manifest, config } => ingest(manifest, config),
        Command::Serve { config } => serve(config),
        Command::Analyze { log, json } => analyze(log, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

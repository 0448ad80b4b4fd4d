use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use factcheck_core::config::Settings;
use factcheck_core::credibility::RatingScale;
use factcheck_core::llm::TranscriptMock;
use factcheck_core::persistence::{MemoryRepository, Repository};
use factcheck_core::search::{MockSearchProvider, SearchFixture};
use factcheck_core::{
    AgentConfig, Analysis, AnalysisId, AnalysisStatus, Claim, ClaimId, CredibilityTable, MessageCatalog, Role,
    TagVocabulary, UserAccount, UserId,
};
use factcheck_server::{AnalysisRunner, AnalysisStatusView, SHUTDOWN_GRACE, wiring};
use uuid::Uuid;

#[derive(Parser)]
#[command(name = "factcheck", version, about = "Claim verification service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// KEY=value file; environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Analyze one claim offline against scripted model and search fixtures.
    Analyze {
        text: String,
        /// Directory holding transcript.json, search.json and optionally credibility.csv.
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_iterations: u32,
        #[arg(long, default_value_t = 5)]
        max_results: usize,
        #[arg(long, default_value_t = 3)]
        max_queries: usize,
        /// Language tag; detected from the text when absent.
        #[arg(long)]
        language: Option<String>,
        /// Include wall-clock fields in the report.
        #[arg(long)]
        timestamps: bool,
    },
    /// Validate a domain credibility table.
    CheckTable {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = Scale::Unit)]
        scale: Scale,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Scale {
    /// Ratings in [0, 1].
    Unit,
    /// Ratings in [0, 100].
    Percent,
}

impl From<Scale> for RatingScale {
    fn from(scale: Scale) -> Self {
        match scale {
            Scale::Unit => RatingScale::Unit,
            Scale::Percent => RatingScale::Percent,
        }
    }
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ANALYSIS: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_filter = match cli.command {
        Command::Serve { .. } => "info",
        _ => "warn",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| default_filter.into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(err) => {
            eprintln!("error: cannot start runtime: {err}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match cli.command {
        Command::Serve { config } => runtime.block_on(serve(config.as_deref())),
        Command::Analyze {
            text,
            fixtures,
            max_iterations,
            max_results,
            max_queries,
            language,
            timestamps,
        } => {
            let config = AgentConfig {
                max_iterations,
                max_results_per_query: max_results,
                max_queries_per_turn: max_queries,
            };
            runtime.block_on(analyze(&text, &fixtures, config, language.as_deref(), timestamps))
        }
        Command::CheckTable { table, scale } => check_table(&table, scale.into()),
    }
}

async fn serve(config: Option<&Path>) -> ExitCode {
    let settings = match config {
        Some(path) => Settings::load(path),
        None => Settings::from_env(),
    };
    let settings = match settings {
        Ok(s) => s,
        Err(err) => {
            eprintln!("error: config: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let state = match wiring::state_from_settings(&settings) {
        Ok(state) => state,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let listener = match tokio::net::TcpListener::bind(settings.bind_addr).await {
        Ok(l) => l,
        Err(err) => {
            eprintln!("error: cannot bind {}: {err}", settings.bind_addr);
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match state.runner().resume_unfinished() {
        Ok(0) => {}
        Ok(n) => tracing::info!(resumed = n, "re-queued unfinished analyses"),
        Err(err) => tracing::error!(error = %err, "could not list unfinished analyses"),
    }
    let addr = listener.local_addr().unwrap_or(settings.bind_addr);
    tracing::info!(%addr, dev_login = settings.dev_login, "listening");
    match factcheck_server::serve(listener, state, SHUTDOWN_GRACE, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: server: {err}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

// Fixed identities and clock so identical fixtures print identical reports.
const USER_ID: u128 = 1;
const CLAIM_ID: u128 = 2;
const ANALYSIS_ID: u128 = 3;

fn epoch() -> DateTime<Utc> {
    DateTime::UNIX_EPOCH
}

fn load_fixtures(dir: &Path) -> Result<(TranscriptMock, SearchFixture, CredibilityTable), String> {
    let transcript_path = dir.join("transcript.json");
    let search_path = dir.join("search.json");
    let transcript =
        TranscriptMock::from_path(&transcript_path).map_err(|e| format!("{}: {e}", transcript_path.display()))?;
    let search = SearchFixture::from_path(&search_path).map_err(|e| format!("{}: {e}", search_path.display()))?;
    let table_path = dir.join("credibility.csv");
    let table = wiring::load_table(table_path.exists().then_some(table_path.as_path()), RatingScale::Unit)
        .map_err(|e| format!("{}: {e}", table_path.display()))?;
    Ok((transcript, search, table))
}

async fn analyze(text: &str, fixtures: &Path, config: AgentConfig, language: Option<&str>, timestamps: bool) -> ExitCode {
    let (transcript, search, table) = match load_fixtures(fixtures) {
        Ok(f) => f,
        Err(err) => {
            eprintln!("error: fixtures: {err}");
            return ExitCode::from(EXIT_ANALYSIS);
        }
    };
    let agent = match wiring::agent(
        Arc::new(transcript),
        Arc::new(MockSearchProvider::new(search)),
        table,
        config,
        0.0,
    ) {
        Ok(a) => a,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let now = if timestamps { Utc::now() } else { epoch() };
    let mut user = UserAccount::new("cli", Role::General, now).expect("general role");
    user.id = UserId::from_uuid(Uuid::from_u128(USER_ID));
    let mut claim = match Claim::new(user.id, text, language, usize::MAX, now) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("error: claim: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    claim.id = ClaimId::from_uuid(Uuid::from_u128(CLAIM_ID));
    let mut analysis = Analysis::pending(claim.id, now);
    analysis.id = AnalysisId::from_uuid(Uuid::from_u128(ANALYSIS_ID));

    let repo: Arc<dyn Repository> = Arc::new(MemoryRepository::new(TagVocabulary::default()));
    let stored = repo
        .save_user(&user)
        .and_then(|_| repo.save_claim(&claim))
        .and_then(|_| repo.create_analysis(&analysis));
    if let Err(err) = stored {
        eprintln!("error: {err}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    let runner = AnalysisRunner::new(Arc::clone(&repo), agent);
    runner.enqueue(analysis.id, claim.clone());
    // Closing the runner waits for the one job to finish.
    runner.shutdown(Duration::from_secs(3600)).await;

    let record = match repo.get_analysis_with_sources(analysis.id) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let view = AnalysisStatusView::build(&record, &claim.language, MessageCatalog::builtin(), timestamps);
    println!("{}", serde_json::to_string_pretty(&view).expect("report serializes"));
    if view.status == AnalysisStatus::Complete {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: {}", view.error_detail.as_deref().unwrap_or("analysis failed"));
        ExitCode::from(EXIT_ANALYSIS)
    }
}

fn check_table(path: &Path, scale: RatingScale) -> ExitCode {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(err) => {
            eprintln!("error: {}: {err}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match CredibilityTable::validate(file, scale) {
        Ok(report) if report.problems.is_empty() => {
            println!("{} domains", report.table.len());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            for problem in &report.problems {
                eprintln!("{}: {problem}", path.display());
            }
            eprintln!(
                "{} problem(s); {} valid domains",
                report.problems.len(),
                report.table.len()
            );
            ExitCode::from(EXIT_CONFIG)
        }
        Err(err) => {
            eprintln!("error: {}: {err}", path.display());
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

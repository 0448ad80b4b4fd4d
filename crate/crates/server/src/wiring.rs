//! Builds the service from [`Settings`].

use std::path::Path;
use std::sync::Arc;

use factcheck_core::config::{LlmBackend, SearchBackend, Settings};
use factcheck_core::credibility::{CredibilityError, RatingScale};
use factcheck_core::llm::{HttpLlmProvider, LlmGateway, LlmProvider, TranscriptMock};
use factcheck_core::persistence::StorageError;
use factcheck_core::search::{HttpSearchProvider, MockSearchProvider, SearchFixture, SearchGateway, SearchProvider};
use factcheck_core::{AgentConfig, AgentError, CredibilityTable, RetrievalAgent};
use thiserror::Error;

use crate::api::{AppState, ServiceOptions};
use crate::worker::AnalysisRunner;

#[derive(Debug, Error)]
pub enum WiringError {
    #[error("llm provider: {0}")]
    Llm(String),
    #[error("search provider: {0}")]
    Search(String),
    #[error("credibility table: {0}")]
    Table(#[from] CredibilityError),
    #[error("storage: {0}")]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

pub fn load_table(path: Option<&Path>, scale: RatingScale) -> Result<CredibilityTable, WiringError> {
    Ok(match path {
        Some(path) => CredibilityTable::load_path(path, scale)?,
        None => CredibilityTable::new("empty"),
    })
}

pub fn llm_provider(backend: &LlmBackend) -> Result<Arc<dyn LlmProvider>, WiringError> {
    Ok(match backend {
        LlmBackend::Http(config) => {
            Arc::new(HttpLlmProvider::new(config.clone()).map_err(|e| WiringError::Llm(e.to_string()))?)
        }
        LlmBackend::Transcript(path) => Arc::new(
            TranscriptMock::from_path(path).map_err(|e| WiringError::Llm(format!("{}: {e}", path.display())))?,
        ),
    })
}

pub fn search_provider(backend: &SearchBackend) -> Result<Arc<dyn SearchProvider>, WiringError> {
    Ok(match backend {
        SearchBackend::Http(config) => {
            Arc::new(HttpSearchProvider::new(config.clone()).map_err(|e| WiringError::Search(e.to_string()))?)
        }
        SearchBackend::Fixture(path) => {
            let fixture = SearchFixture::from_path(path)
                .map_err(|e| WiringError::Search(format!("{}: {e}", path.display())))?;
            Arc::new(MockSearchProvider::new(fixture))
        }
    })
}

pub fn agent(
    llm: Arc<dyn LlmProvider>,
    search: Arc<dyn SearchProvider>,
    table: CredibilityTable,
    config: AgentConfig,
    temperature: f64,
) -> Result<RetrievalAgent, WiringError> {
    Ok(RetrievalAgent::new(
        LlmGateway::new(llm).with_temperature(temperature),
        SearchGateway::new(search),
        Arc::new(table),
        config,
    )?)
}

/// Opens storage, builds the agent and runner, and re-queues analyses left
/// unfinished by a previous process.
pub fn state_from_settings(settings: &Settings) -> Result<AppState, WiringError> {
    let repo = settings.storage.open(settings.feedback_tags.clone())?;
    let table = load_table(settings.credibility_table_path.as_deref(), settings.credibility_scale)?;
    let agent = agent(
        llm_provider(&settings.llm)?,
        search_provider(&settings.search)?,
        table,
        settings.agent,
        settings.llm_temperature,
    )?;
    let runner = AnalysisRunner::new(Arc::clone(&repo), agent);
    let options = ServiceOptions {
        claim_max_len: settings.claim_max_len,
        rate_limit_per_min: settings.rate_limit_per_min,
        dev_login: settings.dev_login,
        token_secret: settings.token_secret.clone(),
        token_ttl: settings.token_ttl,
    };
    let state = AppState::new(repo, runner, options);
    Ok(state)
}

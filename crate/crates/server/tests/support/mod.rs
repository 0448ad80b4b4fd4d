//! Shared harness for the server test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::Router;
use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode, header};
use chrono::Utc;
use factcheck_core::credibility::RatingScale;
use factcheck_core::llm::{LlmGateway, LlmProvider, TranscriptMock};
use factcheck_core::persistence::{MemoryRepository, Repository};
use factcheck_core::search::{MockSearchProvider, RetryPolicy, SearchFixture, SearchGateway, SearchProvider};
use factcheck_core::{
    AgentConfig, AnalysisStatus, Claim, CredibilityTable, RetrievalAgent, Role, TagVocabulary, UserId, VerdictBand,
};
use factcheck_server::{AnalysisRunner, AppState, ServiceOptions, router, wiring};
use http_body_util::BodyExt;
use serde::Deserialize;
use serde_json::Value;
use tower::ServiceExt;

#[derive(Clone, Debug, Deserialize)]
pub struct ExpectedSource {
    pub url: String,
    pub domain: String,
    pub credibility: Option<f64>,
    pub query: String,
}

/// Outcome replayed by hand from a fixture's transcript and search results.
#[derive(Clone, Debug, Deserialize)]
pub struct Expected {
    pub claim: String,
    pub language: String,
    pub config: ExpectedConfig,
    pub score: u8,
    pub band: VerdictBand,
    pub share_recommended: bool,
    pub iterations_used: u32,
    pub search_calls: u32,
    pub final_turns: u32,
    pub forced_final: bool,
    pub llm_calls: usize,
    pub sources: Vec<ExpectedSource>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct ExpectedConfig {
    pub max_iterations: u32,
    pub max_results_per_query: usize,
    pub max_queries_per_turn: usize,
}

impl From<ExpectedConfig> for AgentConfig {
    fn from(c: ExpectedConfig) -> Self {
        AgentConfig {
            max_iterations: c.max_iterations,
            max_results_per_query: c.max_results_per_query,
            max_queries_per_turn: c.max_queries_per_turn,
        }
    }
}

pub struct Scripted {
    pub name: String,
    pub expected: Expected,
    pub llm: Arc<TranscriptMock>,
    pub search: Arc<MockSearchProvider>,
    pub table: CredibilityTable,
}

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/transcripts")
}

pub fn fixture_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(fixtures_root())
        .expect("fixtures directory")
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("expected.json").exists())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Loads a fixture with fresh mocks, so every call starts a new transcript.
pub fn scripted(name: &str) -> Scripted {
    let dir = fixtures_root().join(name);
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let llm = Arc::new(TranscriptMock::from_path(&dir.join("transcript.json")).unwrap());
    let search = Arc::new(MockSearchProvider::new(SearchFixture::from_path(&dir.join("search.json")).unwrap()));
    let table_path = dir.join("credibility.csv");
    let table = wiring::load_table(table_path.exists().then_some(table_path.as_path()), RatingScale::Unit).unwrap();
    Scripted {
        name: name.to_string(),
        expected,
        llm,
        search,
        table,
    }
}

impl Scripted {
    /// The agent as the service wires it, default retry policy included.
    pub fn agent(&self) -> RetrievalAgent {
        wiring::agent(
            self.llm.clone(),
            self.search.clone(),
            self.table.clone(),
            self.expected.config.into(),
            0.0,
        )
        .unwrap()
    }

    pub fn claim(&self) -> Claim {
        Claim::new(UserId::new(), &self.expected.claim, Some(&self.expected.language), 2000, Utc::now()).unwrap()
    }
}

/// Agent over arbitrary providers with search retries disabled.
pub fn instant_agent(
    llm: Arc<dyn LlmProvider>,
    search: Arc<dyn SearchProvider>,
    table: CredibilityTable,
    config: AgentConfig,
) -> RetrievalAgent {
    RetrievalAgent::new(
        LlmGateway::new(llm),
        SearchGateway::new(search).with_retry(RetryPolicy::none()),
        Arc::new(table),
        config,
    )
    .unwrap()
}

pub struct Harness {
    pub state: AppState,
    pub router: Router,
}

pub struct Response {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Bytes,
}

impl Response {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

impl Harness {
    pub fn new(agent: RetrievalAgent) -> Self {
        Self::with_options(agent, ServiceOptions::default())
    }

    pub fn with_options(agent: RetrievalAgent, options: ServiceOptions) -> Self {
        let repo: Arc<dyn Repository> = Arc::new(MemoryRepository::new(TagVocabulary::default()));
        let runner = AnalysisRunner::new(Arc::clone(&repo), agent);
        let state = AppState::new(repo, runner, options);
        Self {
            router: router(state.clone()),
            state,
        }
    }

    pub fn repo(&self) -> &Arc<dyn Repository> {
        self.state.repo()
    }

    pub async fn call(&self, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> Response {
        let mut req = Request::builder().method(method.to_uppercase().as_str()).uri(path);
        if let Some(token) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {token}"));
        }
        let req = match body {
            Some(body) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(body.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let headers = res.headers().clone();
        let body = res.into_body().collect().await.unwrap().to_bytes();
        Response { status, headers, body }
    }

    pub async fn get(&self, path: &str, token: &str) -> Response {
        self.call("get", path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Response {
        self.call("post", path, Some(token), Some(body)).await
    }

    /// Token and id for a fresh account. Experts are created as general
    /// users and approved, as the service requires.
    pub async fn login(&self, role: Role) -> (String, UserId) {
        let requested = if role == Role::Admin { "admin" } else { "general" };
        let res = self
            .call("post", "/api/v1/dev/login", None, Some(serde_json::json!({"role": requested})))
            .await;
        assert_eq!(res.status, StatusCode::OK, "{}", String::from_utf8_lossy(&res.body));
        let body = res.json();
        let token = body["token"].as_str().unwrap().to_string();
        let user: UserId = serde_json::from_value(body["user_id"].clone()).unwrap();
        if role == Role::Expert {
            self.repo().approve_expert(user).unwrap();
        }
        (token, user)
    }

    /// Polls until the analysis is terminal; returns every status seen and
    /// the final body.
    pub async fn poll_until_terminal(&self, token: &str, analysis_id: &str, limit: Duration) -> (Vec<AnalysisStatus>, Value) {
        let path = format!("/api/v1/analyses/{analysis_id}");
        let deadline = Instant::now() + limit;
        let mut seen = Vec::new();
        loop {
            let res = self.get(&path, token).await;
            assert_eq!(res.status, StatusCode::OK);
            let body = res.json();
            let status: AnalysisStatus = serde_json::from_value(body["status"].clone()).unwrap();
            if seen.last() != Some(&status) {
                seen.push(status);
            }
            if status.is_terminal() {
                return (seen, body);
            }
            assert!(Instant::now() < deadline, "analysis {analysis_id} still {status} after {limit:?}");
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }
}

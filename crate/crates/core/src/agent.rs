//! The retrieval agent: an iterative loop between the model and web search.
//!
//! ```text
//! for turn in 1..=max_iterations:
//!     render agent_turn(claim, evidence so far) -> model
//!     SEARCH [q..]  -> run queries, dedupe into evidence, annotate credibility
//!     FINAL         -> final_verdict(evidence) -> model -> SCORE/EXPLANATION, stop
//! budget exhausted  -> forced final_verdict ("no further search")
//! ```
//!
//! A verdict that cannot be parsed is re-requested once with a stricter
//! instruction; a second failure fails the run. The sources returned are
//! exactly the evidence the model was shown, in (turn, query, result) order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use futures::future::join_all;
use thiserror::Error;

use crate::credibility::{CredibilityTable, summarize_sources};
use crate::llm::prompt::SYSTEM_PROMPT;
use crate::llm::{
    AgentDirective, LlmError, LlmGateway, Message, PromptError, ProtocolError, TemplateId, VerdictPayload,
    parse_agent_directive, parse_verdict, render_prompt,
};
use crate::model::{AnalysisStatus, Claim, SourceCandidate, SourceSummary};
use crate::search::{SearchError, SearchGateway, extract_domain, normalize_url};

const FORCED_FINAL_NOTE: &str =
    "No further searches are available. Give your verdict using only the evidence above.";
const STRICT_VERDICT_NOTE: &str = "Your previous reply could not be read. Reply with exactly one line \
`SCORE: <integer from 0 to 100>` followed by a line starting with `EXPLANATION:`, and nothing else.";
const PROTOCOL_REMINDER: &str = "Your previous reply did not follow the protocol. Reply with exactly \
one line: `SEARCH: [\"query\"]` or `FINAL`.";

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub max_iterations: u32,
    pub max_results_per_query: usize,
    pub max_queries_per_turn: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            max_results_per_query: 5,
            max_queries_per_turn: 3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iterations == 0 || self.max_results_per_query == 0 || self.max_queries_per_turn == 0 {
            return Err(AgentError::InvalidConfig(format!("all agent limits must be at least 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FailureCause {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Verdict(#[from] ProtocolError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("analysis failed: {0}")]
    AnalysisFailed(FailureCause),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

macro_rules! failure_from {
    ($($err:ty),*) => {$(
        impl From<$err> for AgentError {
            fn from(cause: $err) -> Self {
                AgentError::AnalysisFailed(cause.into())
            }
        }
    )*};
}

failure_from!(LlmError, ProtocolError, PromptError);

/// Receives lifecycle progress while an analysis runs. Each status is
/// reported at most once and only in lifecycle order.
pub trait ProgressObserver: Send + Sync {
    fn on_status(&self, status: AnalysisStatus);
}

/// Observer that ignores progress.
pub struct NoProgress;

impl ProgressObserver for NoProgress {
    fn on_status(&self, _status: AnalysisStatus) {}
}

/// Mutable state of one run. Owned exclusively by that run.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub claim: Claim,
    pub transcript: Vec<Message>,
    pub evidence: Vec<SourceCandidate>,
    pub iterations_used: u32,
    pub issued_queries: Vec<String>,
    pub search_calls: u32,
    pub final_turns: u32,
    notes: Vec<String>,
    seen_urls: HashSet<String>,
    reported: AnalysisStatus,
}

impl AgentState {
    pub fn new(claim: Claim) -> Self {
        Self {
            claim,
            transcript: Vec::new(),
            evidence: Vec::new(),
            iterations_used: 0,
            issued_queries: Vec::new(),
            search_calls: 0,
            final_turns: 0,
            notes: Vec::new(),
            seen_urls: HashSet::new(),
            reported: AnalysisStatus::Pending,
        }
    }

    fn report(&mut self, status: AnalysisStatus, observer: &dyn ProgressObserver) {
        if self.reported.can_transition_to(status) {
            self.reported = status;
            observer.on_status(status);
        }
    }

    fn note(&mut self, note: String) {
        self.transcript.push(Message::system(note.clone()));
        self.notes.push(note);
    }

    fn render_evidence(&self) -> String {
        if self.evidence.is_empty() {
            return "(none yet)".to_string();
        }
        let mut out = String::new();
        for (idx, source) in self.evidence.iter().enumerate() {
            let credibility = match source.credibility {
                Some(c) => format!("credibility {c:.2}"),
                None => "credibility unrated".to_string(),
            };
            let title = if source.title.is_empty() { "(untitled)" } else { &source.title };
            let _ = writeln!(out, "[{}] {title} ({}, {credibility})", idx + 1, source.domain);
            if !source.snippet.is_empty() {
                let _ = writeln!(out, "    {}", source.snippet);
            }
            let _ = writeln!(out, "    {}", source.url);
        }
        out.trim_end().to_string()
    }

    fn render_queries(&self) -> String {
        if self.issued_queries.is_empty() {
            return "(none)".to_string();
        }
        self.issued_queries
            .iter()
            .map(|q| format!("- {q}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn render_notes(&self) -> String {
        self.notes.iter().map(|n| format!("\nNote: {n}\n")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutcome {
    pub verdict: VerdictPayload,
    /// Exactly the evidence shown to the model, in accumulation order.
    pub sources: Vec<SourceCandidate>,
    pub summary: SourceSummary,
    /// Agent turns taken (forced final turns are not counted).
    pub iterations_used: u32,
    pub search_calls: u32,
    pub final_turns: u32,
    pub forced_final: bool,
    pub transcript: Vec<Message>,
}

#[derive(Clone)]
pub struct RetrievalAgent {
    llm: LlmGateway,
    search: SearchGateway,
    table: Arc<CredibilityTable>,
    config: AgentConfig,
}

impl RetrievalAgent {
    pub fn new(
        llm: LlmGateway,
        search: SearchGateway,
        table: Arc<CredibilityTable>,
        config: AgentConfig,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self {
            llm,
            search,
            table,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn table(&self) -> &CredibilityTable {
        &self.table
    }

    /// Runs the full loop for one validated claim.
    pub async fn analyze_claim(
        &self,
        claim: &Claim,
        observer: &dyn ProgressObserver,
    ) -> Result<AgentOutcome, AgentError> {
        let mut state = AgentState::new(claim.clone());
        for turn in 1..=self.config.max_iterations {
            let reply = self.agent_turn(&mut state, turn).await?;
            match parse_agent_directive(&reply) {
                Ok(AgentDirective::Finalize) => {
                    let verdict = self.final_verdict(&mut state, false, observer).await?;
                    return Ok(self.outcome(state, verdict, false));
                }
                Ok(directive @ AgentDirective::Search { .. }) => {
                    let AgentDirective::Search { queries } = directive.limit_queries(self.config.max_queries_per_turn)
                    else {
                        unreachable!()
                    };
                    state.report(AnalysisStatus::Searching, observer);
                    self.run_queries(&mut state, &queries).await;
                }
                Err(err) => {
                    tracing::debug!(turn, error = %err, "unparseable agent directive");
                    state.note(PROTOCOL_REMINDER.to_string());
                }
            }
        }
        let verdict = self.force_final_verdict(&mut state, observer).await?;
        Ok(self.outcome(state, verdict, true))
    }

    /// Final verdict turn issued once the iteration budget is spent. The
    /// prompt tells the model that no further search is available.
    pub async fn force_final_verdict(
        &self,
        state: &mut AgentState,
        observer: &dyn ProgressObserver,
    ) -> Result<VerdictPayload, AgentError> {
        self.final_verdict(state, true, observer).await
    }

    async fn agent_turn(&self, state: &mut AgentState, turn: u32) -> Result<String, AgentError> {
        let vars = BTreeMap::from([
            ("claim", state.claim.text.clone()),
            ("language", state.claim.language.clone()),
            ("evidence", state.render_evidence()),
            ("previous_queries", state.render_queries()),
            ("notes", state.render_notes()),
            ("turn", turn.to_string()),
            ("max_turns", self.config.max_iterations.to_string()),
            ("max_queries", self.config.max_queries_per_turn.to_string()),
        ]);
        let prompt = render_prompt(TemplateId::AgentTurn, &vars)?;
        state.notes.clear();
        let reply = self.ask(state, prompt).await?;
        state.iterations_used = turn;
        Ok(reply)
    }

    async fn ask(&self, state: &mut AgentState, prompt: String) -> Result<String, AgentError> {
        let request = self.llm.request(SYSTEM_PROMPT, vec![Message::user(prompt.clone())]);
        state.transcript.push(Message::user(prompt));
        let reply = self.llm.complete(&request).await?;
        state.transcript.push(Message::assistant(reply.clone()));
        Ok(reply)
    }

    async fn run_queries(&self, state: &mut AgentState, queries: &[String]) {
        let locale = state.claim.language.clone();
        let calls = queries
            .iter()
            .map(|q| self.search.search(q, &locale, self.config.max_results_per_query));
        let outcomes: Vec<Result<_, SearchError>> = join_all(calls).await;
        state.search_calls += queries.len() as u32;

        let mut failures = 0;
        for (query, outcome) in queries.iter().zip(outcomes) {
            state.issued_queries.push(query.clone());
            match outcome {
                Ok(results) => {
                    let mut added = 0;
                    for result in results {
                        let Ok(domain) = extract_domain(&result.url) else {
                            continue;
                        };
                        if !state.seen_urls.insert(normalize_url(&result.url)) {
                            continue;
                        }
                        added += 1;
                        state.evidence.push(SourceCandidate {
                            credibility: self.table.lookup(&domain),
                            url: result.url,
                            domain,
                            title: result.title,
                            snippet: result.snippet,
                            query: query.clone(),
                        });
                    }
                    if added == 0 {
                        state.note(format!("The search {query:?} returned no new sources."));
                    }
                }
                Err(err) => {
                    failures += 1;
                    tracing::warn!(%query, error = %err, "search failed, skipping query");
                    state.note(format!("The search {query:?} failed ({err}) and was skipped."));
                }
            }
        }
        if failures == queries.len() {
            state.note("Every search in the last turn failed; no new evidence was added.".to_string());
        }
    }

    async fn final_verdict(
        &self,
        state: &mut AgentState,
        forced: bool,
        observer: &dyn ProgressObserver,
    ) -> Result<VerdictPayload, AgentError> {
        state.report(AnalysisStatus::Analyzing, observer);
        let mut last_error = None;
        for attempt in 0..2 {
            let vars = BTreeMap::from([
                ("claim", state.claim.text.clone()),
                ("language", state.claim.language.clone()),
                ("evidence", state.render_evidence()),
                ("search_note", if forced { format!("\n{FORCED_FINAL_NOTE}\n") } else { String::new() }),
                ("strict_note", if attempt > 0 { format!("\n{STRICT_VERDICT_NOTE}\n") } else { String::new() }),
            ]);
            let prompt = render_prompt(TemplateId::FinalVerdict, &vars)?;
            state.final_turns += 1;
            let reply = self.ask(state, prompt).await?;
            match parse_verdict(&reply) {
                Ok(verdict) => return Ok(verdict),
                Err(err) => {
                    tracing::debug!(attempt, error = %err, "unparseable verdict");
                    last_error = Some(err);
                }
            }
        }
        Err(AgentError::AnalysisFailed(FailureCause::Verdict(
            last_error.expect("two failed attempts"),
        )))
    }

    fn outcome(&self, state: AgentState, verdict: VerdictPayload, forced_final: bool) -> AgentOutcome {
        let summary = summarize_sources(&state.evidence, &self.table);
        AgentOutcome {
            verdict,
            summary,
            iterations_used: state.iterations_used,
            search_calls: state.search_calls,
            final_turns: state.final_turns,
            forced_final,
            sources: state.evidence,
            transcript: state.transcript,
        }
    }
}

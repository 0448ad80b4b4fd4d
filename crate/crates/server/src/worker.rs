//! Background analysis jobs.
//!
//! Each analysis runs on its own tokio task; a set of active ids keeps it to
//! at most one worker per analysis. Progress reported by the agent is written
//! through as compare-and-set transitions. Sources are stored before the
//! analysis is marked complete, so a complete record always has them.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use factcheck_core::agent::ProgressObserver;
use factcheck_core::persistence::{Repository, StorageError, TransitionFields};
use factcheck_core::{AgentOutcome, AnalysisId, AnalysisResult, AnalysisStatus, Claim, RetrievalAgent};
use tokio::sync::broadcast;
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

pub const SHUTDOWN_DETAIL: &str = "shutdown";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StatusEvent {
    pub analysis_id: AnalysisId,
    pub status: AnalysisStatus,
}

pub struct AnalysisRunner {
    repo: Arc<dyn Repository>,
    agent: RetrievalAgent,
    tracker: TaskTracker,
    cancel: CancellationToken,
    active: Mutex<HashSet<AnalysisId>>,
    events: broadcast::Sender<StatusEvent>,
}

/// Writes agent progress through to storage, forward only.
struct PersistingObserver<'a> {
    runner: &'a AnalysisRunner,
    id: AnalysisId,
    current: Mutex<AnalysisStatus>,
}

impl PersistingObserver<'_> {
    fn advance(&self, to: AnalysisStatus, fields: TransitionFields) -> Result<(), StorageError> {
        let mut current = self.current.lock().unwrap_or_else(|e| e.into_inner());
        if *current == to {
            return Ok(());
        }
        self.runner.repo.transition_analysis(self.id, *current, to, fields)?;
        *current = to;
        let _ = self.runner.events.send(StatusEvent {
            analysis_id: self.id,
            status: to,
        });
        Ok(())
    }

    fn status(&self) -> AnalysisStatus {
        *self.current.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ProgressObserver for PersistingObserver<'_> {
    fn on_status(&self, status: AnalysisStatus) {
        if status.rank() <= self.status().rank() || status.is_terminal() {
            return;
        }
        if let Err(err) = self.advance(status, TransitionFields::progress(Utc::now())) {
            tracing::warn!(analysis = %self.id, %status, error = %err, "progress not recorded");
        }
    }
}

impl AnalysisRunner {
    pub fn new(repo: Arc<dyn Repository>, agent: RetrievalAgent) -> Arc<Self> {
        let (events, _) = broadcast::channel(256);
        Arc::new(Self {
            repo,
            agent,
            tracker: TaskTracker::new(),
            cancel: CancellationToken::new(),
            active: Mutex::new(HashSet::new()),
            events,
        })
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StatusEvent> {
        self.events.subscribe()
    }

    pub fn active_count(&self) -> usize {
        self.active.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Starts a worker unless one is already running for this analysis.
    /// Returns whether a worker was started. After shutdown has begun the
    /// analysis is failed instead.
    pub fn enqueue(self: &Arc<Self>, analysis_id: AnalysisId, claim: Claim) -> bool {
        if self.tracker.is_closed() {
            self.fail_unfinished(analysis_id, SHUTDOWN_DETAIL);
            return false;
        }
        if !self.active.lock().unwrap_or_else(|e| e.into_inner()).insert(analysis_id) {
            return false;
        }
        let runner = Arc::clone(self);
        self.tracker.spawn(async move {
            runner.run(analysis_id, claim).await;
            runner.active.lock().unwrap_or_else(|e| e.into_inner()).remove(&analysis_id);
        });
        true
    }

    /// Re-queues analyses left unfinished by an earlier process.
    pub fn resume_unfinished(self: &Arc<Self>) -> Result<usize, StorageError> {
        let mut resumed = 0;
        for analysis in self.repo.unfinished_analyses()? {
            let claim = self.repo.get_claim(analysis.claim_id)?;
            resumed += usize::from(self.enqueue(analysis.id, claim));
        }
        Ok(resumed)
    }

    async fn run(&self, id: AnalysisId, claim: Claim) {
        let stored = match self.repo.get_analysis(id) {
            Ok(a) if !a.status.is_terminal() => a.status,
            Ok(_) => return,
            Err(err) => {
                tracing::error!(analysis = %id, error = %err, "analysis vanished before its worker started");
                return;
            }
        };
        let observer = PersistingObserver {
            runner: self,
            id,
            current: Mutex::new(stored),
        };
        let outcome = tokio::select! {
            biased;
            _ = self.cancel.cancelled() => None,
            outcome = self.agent.analyze_claim(&claim, &observer) => Some(outcome),
        };
        let finished = match outcome {
            Some(Ok(outcome)) => self.finish(&observer, outcome),
            Some(Err(err)) => {
                tracing::info!(analysis = %id, error = %err, "analysis failed");
                self.fail(&observer, &err.to_string(), None)
            }
            None => self.fail(&observer, SHUTDOWN_DETAIL, None),
        };
        if let Err(err) = finished {
            tracing::error!(analysis = %id, error = %err, "could not record analysis outcome");
        }
    }

    fn finish(&self, observer: &PersistingObserver<'_>, outcome: AgentOutcome) -> Result<(), StorageError> {
        let now = Utc::now();
        let sources: Vec<_> = outcome.sources.into_iter().map(|c| c.into_source(observer.id, now)).collect();
        let result = AnalysisResult::new(outcome.verdict.score, outcome.verdict.explanation).map_err(StorageError::from);
        let stored = result.and_then(|result| {
            self.repo.add_sources(observer.id, &sources)?;
            if observer.status() != AnalysisStatus::Analyzing {
                observer.advance(AnalysisStatus::Analyzing, TransitionFields::progress(now))?;
            }
            observer.advance(
                AnalysisStatus::Complete,
                TransitionFields::complete(result, outcome.iterations_used, now),
            )
        });
        match stored {
            Ok(()) => Ok(()),
            Err(err) => self.fail(observer, &format!("storage: {err}"), Some(outcome.iterations_used)),
        }
    }

    fn fail(&self, observer: &PersistingObserver<'_>, detail: &str, iterations: Option<u32>) -> Result<(), StorageError> {
        observer.advance(AnalysisStatus::Failed, TransitionFields::failed(detail, iterations, Utc::now()))
    }

    fn fail_unfinished(&self, id: AnalysisId, detail: &str) {
        if let Ok(analysis) = self.repo.get_analysis(id) {
            if !analysis.status.is_terminal() {
                let observer = PersistingObserver {
                    runner: self,
                    id,
                    current: Mutex::new(analysis.status),
                };
                if let Err(err) = self.fail(&observer, detail, None) {
                    tracing::error!(analysis = %id, error = %err, "could not fail analysis");
                }
            }
        }
    }

    /// Stops accepting work, lets running analyses finish within `grace`,
    /// then cancels the rest and marks them failed with "shutdown".
    pub async fn shutdown(&self, grace: Duration) {
        self.tracker.close();
        if tokio::time::timeout(grace, self.tracker.wait()).await.is_err() {
            tracing::warn!(remaining = self.active_count(), "cancelling in-flight analyses");
            self.cancel.cancel();
            self.tracker.wait().await;
        }
    }
}

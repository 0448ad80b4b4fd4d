//! Storage contracts for users, claims, analyses, sources and feedback.
//!
//! Two backends implement [`Repository`]: [`MemoryRepository`] for tests and
//! offline runs, and [`SqliteRepository`] for durable storage. Lifecycle
//! legality is enforced here, at the storage boundary: every status change
//! goes through [`Repository::transition_analysis`], a compare-and-set on
//! the stored status.

mod memory;
mod sqlite;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::model::{
    Analysis, AnalysisId, AnalysisResult, AnalysisStatus, Claim, ClaimId, Feedback, FeedbackId, ModelError, Source,
    SourceSummary, TagVocabulary, UserAccount, UserId,
};

pub use memory::MemoryRepository;
pub use sqlite::SqliteRepository;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("{entity} {id} not found")]
    NotFound { entity: &'static str, id: String },
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("illegal transition: stored status is {stored}, requested {from} -> {to}")]
    IllegalTransition {
        stored: AnalysisStatus,
        from: AnalysisStatus,
        to: AnalysisStatus,
    },
    #[error("analysis {0} is not complete")]
    AnalysisNotComplete(AnalysisId),
    #[error("rating {0} is outside 1..=5")]
    InvalidRating(i64),
    #[error("unknown feedback tag {0:?}")]
    UnknownTag(String),
    #[error("conflicting record for {0}")]
    Conflict(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

impl StorageError {
    pub(crate) fn not_found(entity: &'static str, id: impl ToString) -> Self {
        StorageError::NotFound {
            entity,
            id: id.to_string(),
        }
    }
}

impl From<ModelError> for StorageError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::InvalidRating(r) => StorageError::InvalidRating(r),
            ModelError::UnknownTag(t) => StorageError::UnknownTag(t),
            other => StorageError::Invariant(other.to_string()),
        }
    }
}

pub type StorageResult<T> = Result<T, StorageError>;

/// Fields written together with a status change.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionFields {
    pub result: Option<AnalysisResult>,
    pub error_detail: Option<String>,
    pub iterations_used: Option<u32>,
    pub at: DateTime<Utc>,
}

impl TransitionFields {
    pub fn progress(at: DateTime<Utc>) -> Self {
        Self {
            result: None,
            error_detail: None,
            iterations_used: None,
            at,
        }
    }

    pub fn complete(result: AnalysisResult, iterations_used: u32, at: DateTime<Utc>) -> Self {
        Self {
            result: Some(result),
            iterations_used: Some(iterations_used),
            ..Self::progress(at)
        }
    }

    pub fn failed(detail: impl Into<String>, iterations_used: Option<u32>, at: DateTime<Utc>) -> Self {
        Self {
            error_detail: Some(detail.into()),
            iterations_used,
            ..Self::progress(at)
        }
    }
}

/// Applies a transition to a copy of the stored record and re-checks the
/// analysis invariants.
pub(crate) fn apply_transition(
    stored: &Analysis,
    from: AnalysisStatus,
    to: AnalysisStatus,
    fields: TransitionFields,
) -> StorageResult<Analysis> {
    if stored.status != from || !from.can_transition_to(to) {
        return Err(StorageError::IllegalTransition {
            stored: stored.status,
            from,
            to,
        });
    }
    let mut next = stored.clone();
    next.status = to;
    if let Some(iterations) = fields.iterations_used {
        next.iterations_used = iterations;
    }
    if to == AnalysisStatus::Complete {
        next.result = fields.result;
    } else if fields.result.is_some() {
        return Err(StorageError::Invariant(format!("completion fields on {to} transition")));
    }
    if to == AnalysisStatus::Failed {
        next.error_detail = fields.error_detail;
    } else if fields.error_detail.is_some() {
        return Err(StorageError::Invariant(format!("error_detail on {to} transition")));
    }
    if to.is_terminal() {
        next.completed_at = Some(fields.at);
    }
    next.check_invariants()?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisWithSources {
    pub analysis: Analysis,
    pub sources: Vec<Source>,
    pub summary: SourceSummary,
}

impl AnalysisWithSources {
    pub(crate) fn new(analysis: Analysis, sources: Vec<Source>) -> Self {
        let summary = SourceSummary::from_ratings(sources.iter().map(|s| s.credibility));
        Self {
            analysis,
            sources,
            summary,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub status: AnalysisStatus,
    pub at: DateTime<Utc>,
}

/// Keyed stores for every entity. Implementations are safe for concurrent
/// use; each write is atomic per record.
pub trait Repository: Send + Sync {
    fn save_user(&self, user: &UserAccount) -> StorageResult<UserId>;
    fn get_user(&self, id: UserId) -> StorageResult<UserAccount>;
    /// Grants the expert role (admins keep theirs).
    fn approve_expert(&self, id: UserId) -> StorageResult<UserAccount>;

    /// Idempotent for an identical record; the user must exist.
    fn save_claim(&self, claim: &Claim) -> StorageResult<ClaimId>;
    fn get_claim(&self, id: ClaimId) -> StorageResult<Claim>;

    /// Stores a new analysis, which must be pending.
    fn create_analysis(&self, analysis: &Analysis) -> StorageResult<AnalysisId>;
    fn get_analysis(&self, id: AnalysisId) -> StorageResult<Analysis>;
    /// Compare-and-set on the stored status.
    fn transition_analysis(
        &self,
        id: AnalysisId,
        from: AnalysisStatus,
        to: AnalysisStatus,
        fields: TransitionFields,
    ) -> StorageResult<Analysis>;
    /// Every status the analysis has held, oldest first.
    fn transition_log(&self, id: AnalysisId) -> StorageResult<Vec<TransitionRecord>>;
    /// Analyses not yet complete or failed.
    fn unfinished_analyses(&self) -> StorageResult<Vec<Analysis>>;

    /// Appends sources; URLs must be unique within the analysis.
    fn add_sources(&self, analysis_id: AnalysisId, sources: &[Source]) -> StorageResult<()>;
    /// Sources in insertion order and a summary recomputed from them.
    fn get_analysis_with_sources(&self, id: AnalysisId) -> StorageResult<AnalysisWithSources>;

    fn record_feedback(&self, feedback: &Feedback) -> StorageResult<FeedbackId>;
    fn list_feedback_since(&self, since: DateTime<Utc>) -> StorageResult<Vec<Feedback>>;

    /// Claims submitted at or after `since`, newest first, with their analysis.
    fn list_claims_since(&self, since: DateTime<Utc>, limit: usize) -> StorageResult<Vec<(Claim, Analysis)>>;

    fn tag_vocabulary(&self) -> &TagVocabulary;
}

/// Where data lives, from `STORAGE` / `DATABASE_URL`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StorageConfig {
    Memory,
    /// `sqlite://path`, `sqlite::memory:` or a bare path.
    Sqlite(String),
}

impl StorageConfig {
    pub fn from_settings(storage: Option<&str>, database_url: Option<&str>) -> Result<Self, String> {
        match (storage.map(str::trim), database_url) {
            (Some("memory"), _) => Ok(StorageConfig::Memory),
            (Some("sqlite") | None, Some(url)) => Ok(StorageConfig::Sqlite(url.to_string())),
            (None, None) => Ok(StorageConfig::Memory),
            (Some("sqlite"), None) => Err("STORAGE=sqlite requires DATABASE_URL".into()),
            (Some(other), _) => Err(format!("unknown STORAGE {other:?} (expected memory or sqlite)")),
        }
    }

    pub fn open(&self, vocabulary: TagVocabulary) -> StorageResult<Arc<dyn Repository>> {
        Ok(match self {
            StorageConfig::Memory => Arc::new(MemoryRepository::new(vocabulary)),
            StorageConfig::Sqlite(url) => Arc::new(SqliteRepository::open(url, vocabulary)?),
        })
    }
}

/// Keeps the most recent feedback per (user, analysis).
pub fn latest_feedback_per_pair(mut feedback: Vec<Feedback>) -> Vec<Feedback> {
    feedback.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(b.id.cmp(&a.id)));
    let mut seen = std::collections::HashSet::new();
    feedback.retain(|f| seen.insert((f.user_id, f.analysis_id)));
    feedback
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_config_parsing() {
        assert_eq!(StorageConfig::from_settings(Some("memory"), None), Ok(StorageConfig::Memory));
        assert_eq!(StorageConfig::from_settings(None, None), Ok(StorageConfig::Memory));
        assert_eq!(
            StorageConfig::from_settings(None, Some("sqlite://x.db")),
            Ok(StorageConfig::Sqlite("sqlite://x.db".into()))
        );
        assert!(StorageConfig::from_settings(Some("sqlite"), None).is_err());
        assert!(StorageConfig::from_settings(Some("postgres"), None).is_err());
    }
}

use std::collections::HashMap;
use std::sync::RwLock;

use chrono::{DateTime, Utc};

use super::{
    AnalysisWithSources, Repository, StorageError, StorageResult, TransitionFields, TransitionRecord,
    apply_transition,
};
use crate::model::{
    Analysis, AnalysisId, AnalysisStatus, Claim, ClaimId, Feedback, FeedbackId, Source, TagVocabulary, UserAccount,
    UserId, validate_rating,
};

#[derive(Default)]
struct Inner {
    users: HashMap<UserId, UserAccount>,
    claims: HashMap<ClaimId, Claim>,
    analyses: HashMap<AnalysisId, Analysis>,
    analysis_by_claim: HashMap<ClaimId, AnalysisId>,
    transitions: HashMap<AnalysisId, Vec<TransitionRecord>>,
    sources: HashMap<AnalysisId, Vec<Source>>,
    feedback: Vec<Feedback>,
}

/// Repository held entirely in memory behind one lock.
pub struct MemoryRepository {
    inner: RwLock<Inner>,
    vocabulary: TagVocabulary,
}

impl MemoryRepository {
    pub fn new(vocabulary: TagVocabulary) -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            vocabulary,
        }
    }
}

impl Default for MemoryRepository {
    fn default() -> Self {
        Self::new(TagVocabulary::default())
    }
}

impl Repository for MemoryRepository {
    fn save_user(&self, user: &UserAccount) -> StorageResult<UserId> {
        let mut inner = self.inner.write().unwrap();
        if let Some(existing) = inner.users.get(&user.id) {
            if existing != user {
                return Err(StorageError::Conflict(format!("user {}", user.id)));
            }
        }
        inner.users.insert(user.id, user.clone());
        Ok(user.id)
    }

    fn get_user(&self, id: UserId) -> StorageResult<UserAccount> {
        let inner = self.inner.read().unwrap();
        inner.users.get(&id).cloned().ok_or_else(|| StorageError::not_found("user", id))
    }

    fn approve_expert(&self, id: UserId) -> StorageResult<UserAccount> {
        let mut inner = self.inner.write().unwrap();
        let user = inner.users.get_mut(&id).ok_or_else(|| StorageError::not_found("user", id))?;
        user.approve_expert();
        Ok(user.clone())
    }

    fn save_claim(&self, claim: &Claim) -> StorageResult<ClaimId> {
        let mut inner = self.inner.write().unwrap();
        if !inner.users.contains_key(&claim.user_id) {
            return Err(StorageError::UnknownUser(claim.user_id));
        }
        if let Some(existing) = inner.claims.get(&claim.id) {
            if existing != claim {
                return Err(StorageError::Conflict(format!("claim {}", claim.id)));
            }
        }
        inner.claims.insert(claim.id, claim.clone());
        Ok(claim.id)
    }

    fn get_claim(&self, id: ClaimId) -> StorageResult<Claim> {
        let inner = self.inner.read().unwrap();
        inner.claims.get(&id).cloned().ok_or_else(|| StorageError::not_found("claim", id))
    }

    fn create_analysis(&self, analysis: &Analysis) -> StorageResult<AnalysisId> {
        analysis.check_invariants()?;
        if analysis.status != AnalysisStatus::Pending {
            return Err(StorageError::Invariant("new analyses must be pending".into()));
        }
        let mut inner = self.inner.write().unwrap();
        if !inner.claims.contains_key(&analysis.claim_id) {
            return Err(StorageError::not_found("claim", analysis.claim_id));
        }
        if inner.analyses.contains_key(&analysis.id) {
            return Err(StorageError::Conflict(format!("analysis {}", analysis.id)));
        }
        inner.analyses.insert(analysis.id, analysis.clone());
        inner.analysis_by_claim.insert(analysis.claim_id, analysis.id);
        inner.transitions.insert(
            analysis.id,
            vec![TransitionRecord {
                status: analysis.status,
                at: analysis.created_at,
            }],
        );
        Ok(analysis.id)
    }

    fn get_analysis(&self, id: AnalysisId) -> StorageResult<Analysis> {
        let inner = self.inner.read().unwrap();
        inner.analyses.get(&id).cloned().ok_or_else(|| StorageError::not_found("analysis", id))
    }

    fn transition_analysis(
        &self,
        id: AnalysisId,
        from: AnalysisStatus,
        to: AnalysisStatus,
        fields: TransitionFields,
    ) -> StorageResult<Analysis> {
        let mut inner = self.inner.write().unwrap();
        let stored = inner.analyses.get(&id).ok_or_else(|| StorageError::not_found("analysis", id))?;
        let at = fields.at;
        let next = apply_transition(stored, from, to, fields)?;
        inner.analyses.insert(id, next.clone());
        inner
            .transitions
            .entry(id)
            .or_default()
            .push(TransitionRecord { status: to, at });
        Ok(next)
    }

    fn transition_log(&self, id: AnalysisId) -> StorageResult<Vec<TransitionRecord>> {
        let inner = self.inner.read().unwrap();
        inner
            .transitions
            .get(&id)
            .cloned()
            .ok_or_else(|| StorageError::not_found("analysis", id))
    }

    fn unfinished_analyses(&self) -> StorageResult<Vec<Analysis>> {
        let inner = self.inner.read().unwrap();
        let mut out: Vec<Analysis> = inner
            .analyses
            .values()
            .filter(|a| !a.status.is_terminal())
            .cloned()
            .collect();
        out.sort_by_key(|a| (a.created_at, a.id));
        Ok(out)
    }

    fn add_sources(&self, analysis_id: AnalysisId, sources: &[Source]) -> StorageResult<()> {
        let mut inner = self.inner.write().unwrap();
        if !inner.analyses.contains_key(&analysis_id) {
            return Err(StorageError::not_found("analysis", analysis_id));
        }
        let existing = inner.sources.get(&analysis_id).map(Vec::as_slice).unwrap_or_default();
        let mut urls: std::collections::HashSet<&str> = existing.iter().map(|s| s.url.as_str()).collect();
        for source in sources {
            if source.analysis_id != analysis_id {
                return Err(StorageError::Invariant(format!("source {} belongs to another analysis", source.id)));
            }
            if source.credibility.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
                return Err(StorageError::Invariant(format!("credibility of {} out of range", source.url)));
            }
            if !urls.insert(source.url.as_str()) {
                return Err(StorageError::Conflict(format!("source url {}", source.url)));
            }
        }
        inner.sources.entry(analysis_id).or_default().extend_from_slice(sources);
        Ok(())
    }

    fn get_analysis_with_sources(&self, id: AnalysisId) -> StorageResult<AnalysisWithSources> {
        let inner = self.inner.read().unwrap();
        let analysis = inner.analyses.get(&id).cloned().ok_or_else(|| StorageError::not_found("analysis", id))?;
        let sources = inner.sources.get(&id).cloned().unwrap_or_default();
        Ok(AnalysisWithSources::new(analysis, sources))
    }

    fn record_feedback(&self, feedback: &Feedback) -> StorageResult<FeedbackId> {
        validate_rating(feedback.rating as i64)?;
        self.vocabulary.validate(&feedback.tags)?;
        let mut inner = self.inner.write().unwrap();
        let analysis = inner
            .analyses
            .get(&feedback.analysis_id)
            .ok_or_else(|| StorageError::not_found("analysis", feedback.analysis_id))?;
        if analysis.status != AnalysisStatus::Complete {
            return Err(StorageError::AnalysisNotComplete(feedback.analysis_id));
        }
        if !inner.users.contains_key(&feedback.user_id) {
            return Err(StorageError::UnknownUser(feedback.user_id));
        }
        if inner.feedback.iter().any(|f| f.id == feedback.id) {
            return Err(StorageError::Conflict(format!("feedback {}", feedback.id)));
        }
        inner.feedback.push(feedback.clone());
        Ok(feedback.id)
    }

    fn list_feedback_since(&self, since: DateTime<Utc>) -> StorageResult<Vec<Feedback>> {
        let inner = self.inner.read().unwrap();
        Ok(inner.feedback.iter().filter(|f| f.created_at >= since).cloned().collect())
    }

    fn list_claims_since(&self, since: DateTime<Utc>, limit: usize) -> StorageResult<Vec<(Claim, Analysis)>> {
        let inner = self.inner.read().unwrap();
        let mut rows: Vec<(Claim, Analysis)> = inner
            .claims
            .values()
            .filter(|c| c.submitted_at >= since)
            .filter_map(|c| {
                let analysis = inner.analysis_by_claim.get(&c.id).and_then(|id| inner.analyses.get(id))?;
                Some((c.clone(), analysis.clone()))
            })
            .collect();
        rows.sort_by(|a, b| b.0.submitted_at.cmp(&a.0.submitted_at).then(b.0.id.cmp(&a.0.id)));
        rows.truncate(limit);
        Ok(rows)
    }

    fn tag_vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }
}

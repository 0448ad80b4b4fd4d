//! Shared domain types and their invariants. No I/O happens here.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::verdict::{VerdictBand, score_to_band, share_recommendation};

/// Default maximum claim length, in characters.
pub const DEFAULT_MAX_CLAIM_LEN: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("claim text is empty")]
    EmptyClaim,
    #[error("claim text is {len} characters, the maximum is {max}")]
    ClaimTooLong { len: usize, max: usize },
    #[error("score {0} is outside 0..=100")]
    ScoreOutOfRange(i64),
    #[error("rating {0} is outside 1..=5")]
    InvalidRating(i64),
    #[error("unknown feedback tag {0:?}")]
    UnknownTag(String),
    #[error("the expert role can only be granted by an administrator")]
    ExpertRequiresApproval,
    #[error("invalid language tag {0:?}")]
    InvalidLanguage(String),
    #[error("illegal status transition {from} -> {to}")]
    IllegalTransition {
        from: AnalysisStatus,
        to: AnalysisStatus,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Uuid);

        impl $name {
            pub fn new() -> Self {
                Self(Uuid::new_v4())
            }

            pub fn from_uuid(id: Uuid) -> Self {
                Self(id)
            }

            pub fn as_uuid(&self) -> Uuid {
                self.0
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::new()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

id_type!(
    /// Identifies a [`UserAccount`].
    UserId
);
id_type!(
    /// Identifies a [`Claim`].
    ClaimId
);
id_type!(
    /// Identifies an [`Analysis`].
    AnalysisId
);
id_type!(
    /// Identifies a [`Source`].
    SourceId
);
id_type!(
    /// Identifies a [`Feedback`] entry.
    FeedbackId
);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    General,
    Expert,
    Admin,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::General => "general",
            Role::Expert => "expert",
            Role::Admin => "admin",
        }
    }

    /// Experts and admins may read the dashboard.
    pub fn can_view_dashboard(&self) -> bool {
        matches!(self, Role::Expert | Role::Admin)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "general" => Ok(Role::General),
            "expert" => Ok(Role::Expert),
            "admin" => Ok(Role::Admin),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub id: UserId,
    pub display_name: String,
    pub role: Role,
    pub created_at: DateTime<Utc>,
}

impl UserAccount {
    /// Creates a new account. `Role::Expert` is rejected: it is only reachable
    /// through [`UserAccount::approve_expert`].
    pub fn new(
        display_name: impl Into<String>,
        role: Role,
        created_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        if role == Role::Expert {
            return Err(ModelError::ExpertRequiresApproval);
        }
        Ok(Self {
            id: UserId::new(),
            display_name: display_name.into(),
            role,
            created_at,
        })
    }

    /// Admin approval of the expert role. Admins keep their role.
    pub fn approve_expert(&mut self) {
        if self.role == Role::General {
            self.role = Role::Expert;
        }
    }
}

/// Trims a claim and checks it against the length limit (in characters).
pub fn validate_claim_text(text: &str, max_len: usize) -> Result<String, ModelError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ModelError::EmptyClaim);
    }
    let len = trimmed.chars().count();
    if len > max_len {
        return Err(ModelError::ClaimTooLong { len, max: max_len });
    }
    Ok(trimmed.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: ClaimId,
    pub user_id: UserId,
    pub text: String,
    pub language: String,
    pub submitted_at: DateTime<Utc>,
}

impl Claim {
    /// Validates `text` and resolves the language: a supplied tag is trusted,
    /// otherwise it is detected from the text.
    pub fn new(
        user_id: UserId,
        text: &str,
        language: Option<&str>,
        max_len: usize,
        submitted_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        let text = validate_claim_text(text, max_len)?;
        let language = match language {
            Some(tag) => crate::language::normalize_tag(tag)
                .ok_or_else(|| ModelError::InvalidLanguage(tag.to_string()))?,
            None => crate::language::detect(&text).language,
        };
        Ok(Self {
            id: ClaimId::new(),
            user_id,
            text,
            language,
            submitted_at,
        })
    }
}

/// Reliability score, 0 (false) to 100 (true).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Score(u8);

impl Score {
    pub const MAX: u8 = 100;

    pub fn new(value: i64) -> Result<Self, ModelError> {
        if (0..=Self::MAX as i64).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(ModelError::ScoreOutOfRange(value))
        }
    }

    pub fn value(&self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for Score {
    type Error = ModelError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for u8 {
    fn from(score: Score) -> u8 {
        score.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStatus {
    Pending,
    Searching,
    Analyzing,
    Complete,
    Failed,
}

impl AnalysisStatus {
    pub const ALL: [AnalysisStatus; 5] = [
        AnalysisStatus::Pending,
        AnalysisStatus::Searching,
        AnalysisStatus::Analyzing,
        AnalysisStatus::Complete,
        AnalysisStatus::Failed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AnalysisStatus::Pending => "pending",
            AnalysisStatus::Searching => "searching",
            AnalysisStatus::Analyzing => "analyzing",
            AnalysisStatus::Complete => "complete",
            AnalysisStatus::Failed => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, AnalysisStatus::Complete | AnalysisStatus::Failed)
    }

    /// Position in the lifecycle order. Complete and failed share the last rank.
    pub fn rank(&self) -> u8 {
        match self {
            AnalysisStatus::Pending => 0,
            AnalysisStatus::Searching => 1,
            AnalysisStatus::Analyzing => 2,
            AnalysisStatus::Complete | AnalysisStatus::Failed => 3,
        }
    }

    /// Legal edges: pending→searching→analyzing→complete, searching may be
    /// skipped, and any non-terminal state may fail.
    pub fn can_transition_to(&self, next: AnalysisStatus) -> bool {
        use AnalysisStatus::*;
        matches!(
            (self, next),
            (Pending, Searching)
                | (Pending, Analyzing)
                | (Searching, Analyzing)
                | (Analyzing, Complete)
                | (Pending, Failed)
                | (Searching, Failed)
                | (Analyzing, Failed)
        )
    }
}

impl fmt::Display for AnalysisStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnalysisStatus::ALL
            .into_iter()
            .find(|status| status.as_str() == s)
            .ok_or_else(|| format!("unknown analysis status {s:?}"))
    }
}

/// The completion fields of an analysis. Band and share flag are always
/// derived from the score, never set independently.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub score: Score,
    pub verdict_band: VerdictBand,
    pub share_recommended: bool,
    pub explanation: String,
}

impl AnalysisResult {
    pub fn new(score: Score, explanation: impl Into<String>) -> Result<Self, ModelError> {
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(ModelError::Invariant("explanation is empty".into()));
        }
        Ok(Self {
            score,
            verdict_band: score_to_band(score),
            share_recommended: share_recommendation(score),
            explanation,
        })
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.share_recommended != share_recommendation(self.score) {
            return Err(ModelError::Invariant(format!(
                "share_recommended={} disagrees with score {}",
                self.share_recommended, self.score
            )));
        }
        if self.verdict_band != score_to_band(self.score) {
            return Err(ModelError::Invariant(format!(
                "band {:?} disagrees with score {}",
                self.verdict_band, self.score
            )));
        }
        if self.explanation.trim().is_empty() {
            return Err(ModelError::Invariant("explanation is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analysis {
    pub id: AnalysisId,
    pub claim_id: ClaimId,
    pub status: AnalysisStatus,
    /// Present iff `status == Complete`.
    pub result: Option<AnalysisResult>,
    /// Present iff `status == Failed`.
    pub error_detail: Option<String>,
    pub iterations_used: u32,
    pub created_at: DateTime<Utc>,
    pub completed_at: Option<DateTime<Utc>>,
}

impl Analysis {
    pub fn pending(claim_id: ClaimId, created_at: DateTime<Utc>) -> Self {
        Self {
            id: AnalysisId::new(),
            claim_id,
            status: AnalysisStatus::Pending,
            result: None,
            error_detail: None,
            iterations_used: 0,
            created_at,
            completed_at: None,
        }
    }

    pub fn check_invariants(&self) -> Result<(), ModelError> {
        let complete = self.status == AnalysisStatus::Complete;
        let failed = self.status == AnalysisStatus::Failed;
        match (&self.result, complete) {
            (Some(result), true) => result.check()?,
            (None, false) => {}
            (Some(_), false) => {
                return Err(ModelError::Invariant(format!(
                    "{} analysis carries completion fields",
                    self.status
                )));
            }
            (None, true) => {
                return Err(ModelError::Invariant(
                    "complete analysis lacks completion fields".into(),
                ));
            }
        }
        if self.error_detail.is_some() != failed {
            return Err(ModelError::Invariant(format!(
                "error_detail presence does not match status {}",
                self.status
            )));
        }
        if self.status.is_terminal() != self.completed_at.is_some() {
            return Err(ModelError::Invariant(format!(
                "completed_at presence does not match status {}",
                self.status
            )));
        }
        Ok(())
    }
}

/// One evidence item as gathered by the agent, before it is bound to an
/// analysis record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceCandidate {
    pub url: String,
    pub domain: String,
    pub title: String,
    pub snippet: String,
    pub credibility: Option<f64>,
    pub query: String,
}

impl SourceCandidate {
    pub fn into_source(self, analysis_id: AnalysisId, retrieved_at: DateTime<Utc>) -> Source {
        Source {
            id: SourceId::new(),
            analysis_id,
            url: self.url,
            domain: self.domain,
            title: self.title,
            snippet: self.snippet,
            credibility: self.credibility,
            retrieved_at,
            query: self.query,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: SourceId,
    pub analysis_id: AnalysisId,
    pub url: String,
    pub domain: String,
    pub title: String,
    pub snippet: String,
    pub credibility: Option<f64>,
    pub retrieved_at: DateTime<Utc>,
    pub query: String,
}

/// Anything that carries a source domain.
pub trait HasDomain {
    fn domain(&self) -> &str;
}

impl HasDomain for Source {
    fn domain(&self) -> &str {
        &self.domain
    }
}

impl HasDomain for SourceCandidate {
    fn domain(&self) -> &str {
        &self.domain
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source_count: usize,
    pub rated_count: usize,
    pub mean_credibility: Option<f64>,
}

impl SourceSummary {
    /// Builds a summary from one optional rating per source. Unrated sources
    /// count towards `source_count` only.
    pub fn from_ratings<I>(ratings: I) -> Self
    where
        I: IntoIterator<Item = Option<f64>>,
    {
        let mut source_count = 0;
        let mut rated_count = 0;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for rating in ratings {
            source_count += 1;
            if let Some(r) = rating {
                rated_count += 1;
                sum += r;
                min = min.min(r);
                max = max.max(r);
            }
        }
        // the quotient can land one ulp outside the rating range
        let mean_credibility =
            (rated_count > 0).then(|| (sum / rated_count as f64).clamp(min, max));
        Self {
            source_count,
            rated_count,
            mean_credibility,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub id: FeedbackId,
    pub analysis_id: AnalysisId,
    pub user_id: UserId,
    pub rating: u8,
    pub tags: BTreeSet<String>,
    pub comment: Option<String>,
    pub created_at: DateTime<Utc>,
}

pub fn validate_rating(rating: i64) -> Result<u8, ModelError> {
    if (1..=5).contains(&rating) {
        Ok(rating as u8)
    } else {
        Err(ModelError::InvalidRating(rating))
    }
}

/// The fixed set of tags a feedback entry may carry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagVocabulary(BTreeSet<String>);

impl TagVocabulary {
    pub const DEFAULT_TAGS: [&'static str; 5] = ["sources", "explanation", "score", "speed", "other"];

    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tags.into_iter().map(Into::into).collect())
    }

    /// Parses a comma-separated list, ignoring blanks.
    pub fn parse_list(list: &str) -> Self {
        Self::new(
            list.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase),
        )
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn validate<'a, I>(&self, tags: I) -> Result<(), ModelError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        match tags.into_iter().find(|t| !self.contains(t)) {
            Some(unknown) => Err(ModelError::UnknownTag(unknown.clone())),
            None => Ok(()),
        }
    }
}

impl Default for TagVocabulary {
    fn default() -> Self {
        Self::new(Self::DEFAULT_TAGS)
    }
}

impl Feedback {
    /// Validates rating and tags before building the entry.
    pub fn new(
        analysis_id: AnalysisId,
        user_id: UserId,
        rating: i64,
        tags: BTreeSet<String>,
        comment: Option<String>,
        vocabulary: &TagVocabulary,
        created_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        let rating = validate_rating(rating)?;
        vocabulary.validate(&tags)?;
        let comment = comment.filter(|c| !c.trim().is_empty());
        Ok(Self {
            id: FeedbackId::new(),
            analysis_id,
            user_id,
            rating,
            tags,
            comment,
            created_at,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_text_is_trimmed() {
        assert_eq!(validate_claim_text("  Earth is flat ", 2000).unwrap(), "Earth is flat");
    }

    #[test]
    fn empty_and_blank_claims_are_rejected() {
        assert_eq!(validate_claim_text("", 2000), Err(ModelError::EmptyClaim));
        assert_eq!(validate_claim_text(" \t\n ", 2000), Err(ModelError::EmptyClaim));
    }

    #[test]
    fn claim_length_boundary() {
        let at_limit = "é".repeat(10);
        assert!(validate_claim_text(&at_limit, 10).is_ok());
        let over = "é".repeat(11);
        assert_eq!(
            validate_claim_text(&over, 10),
            Err(ModelError::ClaimTooLong { len: 11, max: 10 })
        );
    }

    #[test]
    fn supplied_language_is_trusted() {
        let claim = Claim::new(UserId::new(), "the moon is made of cheese", Some("FR-ca"), 100, Utc::now())
            .unwrap();
        assert_eq!(claim.language, "fr-CA");
        assert!(matches!(
            Claim::new(UserId::new(), "x", Some("not a tag!"), 100, Utc::now()),
            Err(ModelError::InvalidLanguage(_))
        ));
    }

    #[test]
    fn expert_role_cannot_be_self_assigned() {
        assert_eq!(
            UserAccount::new("eve", Role::Expert, Utc::now()),
            Err(ModelError::ExpertRequiresApproval)
        );
        let mut user = UserAccount::new("bob", Role::General, Utc::now()).unwrap();
        user.approve_expert();
        assert_eq!(user.role, Role::Expert);
    }

    #[test]
    fn score_bounds() {
        assert!(Score::new(0).is_ok());
        assert!(Score::new(100).is_ok());
        assert_eq!(Score::new(101), Err(ModelError::ScoreOutOfRange(101)));
        assert_eq!(Score::new(-1), Err(ModelError::ScoreOutOfRange(-1)));
        assert!(serde_json::from_str::<Score>("140").is_err());
    }

    #[test]
    fn lifecycle_edges() {
        use AnalysisStatus::*;
        let legal = [
            (Pending, Searching),
            (Pending, Analyzing),
            (Searching, Analyzing),
            (Analyzing, Complete),
            (Pending, Failed),
            (Searching, Failed),
            (Analyzing, Failed),
        ];
        for from in AnalysisStatus::ALL {
            for to in AnalysisStatus::ALL {
                let expected = legal.contains(&(from, to));
                assert_eq!(from.can_transition_to(to), expected, "{from}->{to}");
                if expected {
                    assert!(to.rank() > from.rank(), "{from}->{to} must move forward");
                }
            }
        }
    }

    #[test]
    fn analysis_invariants() {
        let mut analysis = Analysis::pending(ClaimId::new(), Utc::now());
        analysis.check_invariants().unwrap();

        analysis.status = AnalysisStatus::Complete;
        assert!(analysis.check_invariants().is_err());
        analysis.result = Some(AnalysisResult::new(Score::new(61).unwrap(), "ok").unwrap());
        analysis.completed_at = Some(Utc::now());
        analysis.check_invariants().unwrap();
        assert!(analysis.result.as_ref().unwrap().share_recommended);

        analysis.result.as_mut().unwrap().share_recommended = false;
        assert!(analysis.check_invariants().is_err());
    }

    #[test]
    fn summary_from_ratings() {
        let summary = SourceSummary::from_ratings([Some(0.9), None]);
        assert_eq!(summary.source_count, 2);
        assert_eq!(summary.rated_count, 1);
        assert_eq!(summary.mean_credibility, Some(0.9));

        let empty = SourceSummary::from_ratings([]);
        assert_eq!(empty.source_count, 0);
        assert_eq!(empty.mean_credibility, None);
    }

    #[test]
    fn feedback_validation() {
        let vocab = TagVocabulary::default();
        let tags: BTreeSet<String> = ["sources".to_string()].into();
        let ok = Feedback::new(AnalysisId::new(), UserId::new(), 5, tags, None, &vocab, Utc::now());
        assert!(ok.is_ok());

        let bad_rating =
            Feedback::new(AnalysisId::new(), UserId::new(), 0, BTreeSet::new(), None, &vocab, Utc::now());
        assert_eq!(bad_rating.unwrap_err(), ModelError::InvalidRating(0));

        let tags: BTreeSet<String> = ["nonsense".to_string()].into();
        let bad_tag = Feedback::new(AnalysisId::new(), UserId::new(), 3, tags, None, &vocab, Utc::now());
        assert_eq!(bad_tag.unwrap_err(), ModelError::UnknownTag("nonsense".into()));
    }

    #[test]
    fn tag_vocabulary_parses_lists() {
        let vocab = TagVocabulary::parse_list(" Sources, speed ,,");
        assert!(vocab.contains("sources"));
        assert!(vocab.contains("speed"));
        assert_eq!(vocab.iter().count(), 2);
    }
}

//! Core of the fact-checking service.
//!
//! A claim goes through the [`agent`] loop, which alternates between the
//! hosted model ([`llm`]) and a web search engine ([`search`]) until the
//! model renders a verdict. Sources are annotated from a per-domain
//! [`credibility`] table, the numeric score is interpreted by [`verdict`],
//! and everything is stored through the [`persistence`] repositories.
//! [`analytics`] computes the expert dashboard aggregates.

pub mod agent;
pub mod analytics;
pub mod config;
pub mod credibility;
pub mod language;
pub mod llm;
pub mod model;
pub mod persistence;
pub mod search;
pub mod verdict;

pub use agent::{AgentConfig, AgentError, AgentOutcome, ProgressObserver, RetrievalAgent};
pub use credibility::{CredibilityTable, summarize_sources};
pub use model::{
    Analysis, AnalysisId, AnalysisResult, AnalysisStatus, Claim, ClaimId, Feedback, FeedbackId,
    ModelError, Role, Score, Source, SourceCandidate, SourceId, SourceSummary, TagVocabulary,
    UserAccount, UserId, validate_claim_text,
};
pub use verdict::{MessageCatalog, VerdictBand, score_to_band, share_recommendation};

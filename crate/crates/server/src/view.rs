//! The analysis report shape shared by the API and the CLI.

use chrono::{DateTime, Utc};
use factcheck_core::persistence::AnalysisWithSources;
use factcheck_core::verdict::MessageCatalog;
use factcheck_core::{AnalysisId, AnalysisStatus, ClaimId, SourceSummary, VerdictBand};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceView {
    pub url: String,
    pub domain: String,
    pub title: String,
    pub snippet: String,
    pub credibility: Option<f64>,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_at: Option<DateTime<Utc>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisStatusView {
    pub analysis_id: AnalysisId,
    pub claim_id: ClaimId,
    pub language: String,
    pub status: AnalysisStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<VerdictBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_recommended: Option<bool>,
    /// Localised advice on whether to share, when complete.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub sources: Vec<SourceView>,
    pub summary: SourceSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub iterations_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<DateTime<Utc>>,
}

impl AnalysisStatusView {
    /// `timestamps: false` leaves out every wall-clock field, which makes
    /// reports of identical runs byte-identical.
    pub fn build(record: &AnalysisWithSources, language: &str, catalog: &MessageCatalog, timestamps: bool) -> Self {
        let analysis = &record.analysis;
        let result = analysis.result.as_ref();
        Self {
            analysis_id: analysis.id,
            claim_id: analysis.claim_id,
            language: language.to_string(),
            status: analysis.status,
            score: result.map(|r| r.score.value()),
            band: result.map(|r| r.verdict_band),
            share_recommended: result.map(|r| r.share_recommended),
            share_message: result
                .map(|r| catalog.instruction_message(r.verdict_band, r.share_recommended, language).to_string()),
            explanation: result.map(|r| r.explanation.clone()),
            sources: record
                .sources
                .iter()
                .map(|s| SourceView {
                    url: s.url.clone(),
                    domain: s.domain.clone(),
                    title: s.title.clone(),
                    snippet: s.snippet.clone(),
                    credibility: s.credibility,
                    query: s.query.clone(),
                    retrieved_at: timestamps.then_some(s.retrieved_at),
                })
                .collect(),
            summary: record.summary.clone(),
            error_detail: analysis.error_detail.clone(),
            iterations_used: analysis.iterations_used,
            created_at: timestamps.then_some(analysis.created_at),
            completed_at: if timestamps { analysis.completed_at } else { None },
        }
    }
}

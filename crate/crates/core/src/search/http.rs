use async_trait::async_trait;
use reqwest::StatusCode;
use serde::Deserialize;

use super::{SearchError, SearchProvider, SearchProviderConfig, SearchResult};

/// Client for a JSON web-search API.
///
/// Sends `GET {endpoint}?q=..&count=..&lang=..` with a bearer key and accepts
/// `{"results": [{"url"|"link", "title", "snippet"|"description"}]}`.
pub struct HttpSearchProvider {
    client: reqwest::Client,
    config: SearchProviderConfig,
}

#[derive(Deserialize)]
struct ApiResponse {
    #[serde(default, alias = "items", alias = "organic")]
    results: Vec<ApiResult>,
}

#[derive(Deserialize)]
struct ApiResult {
    #[serde(alias = "link")]
    url: String,
    #[serde(default)]
    title: String,
    #[serde(default, alias = "description", alias = "content")]
    snippet: String,
}

impl HttpSearchProvider {
    pub fn new(config: SearchProviderConfig) -> Result<Self, SearchError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| SearchError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { client, config })
    }
}

fn map_transport(err: reqwest::Error) -> SearchError {
    if err.is_timeout() {
        SearchError::Timeout
    } else {
        SearchError::ProviderUnavailable(err.to_string())
    }
}

#[async_trait]
impl SearchProvider for HttpSearchProvider {
    async fn search(&self, query: &str, locale: &str, limit: usize) -> Result<Vec<SearchResult>, SearchError> {
        let count = limit.min(self.config.max_results_per_query).max(1);
        let response = self
            .client
            .get(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .query(&[("q", query), ("count", &count.to_string()), ("lang", locale)])
            .send()
            .await
            .map_err(map_transport)?;
        match response.status() {
            StatusCode::TOO_MANY_REQUESTS => return Err(SearchError::QuotaExceeded),
            status if !status.is_success() => {
                return Err(SearchError::ProviderUnavailable(format!("status {status}")));
            }
            _ => {}
        }
        let body: ApiResponse = response.json().await.map_err(map_transport)?;
        Ok(body
            .results
            .into_iter()
            .take(count)
            .map(|r| SearchResult {
                url: r.url,
                title: r.title,
                snippet: r.snippet,
            })
            .collect())
    }
}

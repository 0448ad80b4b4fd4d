//! Web search behind a swappable provider, plus result normalization.
//!
//! [`SearchGateway`] wraps any [`SearchProvider`] with the retry policy, the
//! result limit and URL validation. [`MockSearchProvider`] replays a fixture
//! file and [`HttpSearchProvider`] talks to a JSON search API.

mod http;
mod mock;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use http::HttpSearchProvider;
pub use mock::{FixtureEntry, MockFault, MockSearchProvider, SearchFixture};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("search quota exceeded")]
    QuotaExceeded,
    #[error("search timed out")]
    Timeout,
    #[error("search query is empty")]
    EmptyQuery,
    #[error("invalid url {0:?}")]
    InvalidUrl(String),
}

impl SearchError {
    fn is_transient(&self) -> bool {
        matches!(self, SearchError::ProviderUnavailable(_) | SearchError::Timeout)
    }
}

#[async_trait]
pub trait SearchProvider: Send + Sync {
    /// Returns results in provider order. `locale` is a hint the provider may
    /// ignore.
    async fn search(&self, query: &str, locale: &str, limit: usize) -> Result<Vec<SearchResult>, SearchError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchProviderConfig {
    pub endpoint: String,
    pub api_key: String,
    pub max_results_per_query: usize,
    pub timeout: Duration,
}

impl SearchProviderConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            max_results_per_query: 5,
            timeout: Duration::from_secs(10),
        }
    }
}

/// Exponential backoff: `base`, `2 * base`, ... for `retries` extra attempts.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Clone)]
pub struct SearchGateway {
    provider: Arc<dyn SearchProvider>,
    retry: RetryPolicy,
    timeout: Duration,
}

impl SearchGateway {
    pub fn new(provider: Arc<dyn SearchProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(15),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Runs one query. At most `limit` results come back, each with an
    /// absolute URL; results with unparseable URLs are dropped.
    pub async fn search(&self, query: &str, locale: &str, limit: usize) -> Result<Vec<SearchResult>, SearchError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let limit = limit.max(1);
        let mut attempt = 0;
        let results = loop {
            let call = self.provider.search(query, locale, limit);
            let outcome = match tokio::time::timeout(self.timeout, call).await {
                Ok(outcome) => outcome,
                Err(_) => Err(SearchError::Timeout),
            };
            match outcome {
                Ok(results) => break results,
                Err(err) if err.is_transient() && attempt < self.retry.retries => {
                    tracing::debug!(%query, attempt, error = %err, "retrying search");
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        };
        Ok(results
            .into_iter()
            .filter(|r| {
                let ok = extract_domain(&r.url).is_ok();
                if !ok {
                    tracing::warn!(url = %r.url, "dropping search result with invalid url");
                }
                ok
            })
            .take(limit)
            .collect())
    }
}

/// Host of an absolute URL, lowercased, without port and without one
/// leading `www.` label.
pub fn extract_domain(url: &str) -> Result<String, SearchError> {
    let parsed = Url::parse(url.trim()).map_err(|_| SearchError::InvalidUrl(url.to_string()))?;
    let host = parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| SearchError::InvalidUrl(url.to_string()))?;
    Ok(crate::credibility::normalize_domain(host))
}

/// Identity key for deduplication: scheme dropped, fragment dropped, query
/// string kept, host lowercased.
pub fn normalize_url(url: &str) -> String {
    match Url::parse(url.trim()) {
        Ok(mut parsed) => {
            parsed.set_fragment(None);
            let host = parsed.host_str().unwrap_or_default().to_string();
            let port = parsed.port().map(|p| format!(":{p}")).unwrap_or_default();
            let query = parsed.query().map(|q| format!("?{q}")).unwrap_or_default();
            format!("{host}{port}{}{query}", parsed.path())
        }
        Err(_) => url.trim().to_string(),
    }
}

/// Keeps the first result per normalized URL, preserving order.
pub fn dedupe_results(results: Vec<SearchResult>) -> Vec<SearchResult> {
    let mut seen = HashSet::new();
    results
        .into_iter()
        .filter(|r| seen.insert(normalize_url(&r.url)))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use proptest::prelude::*;

    use super::*;

    fn result(url: &str) -> SearchResult {
        SearchResult {
            url: url.to_string(),
            title: format!("title {url}"),
            snippet: String::new(),
        }
    }

    #[test]
    fn domain_extraction() {
        assert_eq!(extract_domain("https://www.reuters.com/a/b").unwrap(), "reuters.com");
        assert_eq!(extract_domain("http://EXAMPLE.org:8080/x").unwrap(), "example.org");
        assert!(matches!(extract_domain("not a url"), Err(SearchError::InvalidUrl(_))));
        assert!(matches!(extract_domain("mailto:someone@example.com"), Err(SearchError::InvalidUrl(_))));
    }

    #[test]
    fn dedupe_examples() {
        let a = result("https://a.com/x");
        let b = result("https://b.com/y");
        assert_eq!(dedupe_results(vec![a.clone(), a.clone()]), vec![a.clone()]);
        assert_eq!(dedupe_results(vec![a.clone(), b.clone(), a.clone()]), vec![a.clone(), b]);
        assert!(dedupe_results(vec![]).is_empty());
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_url("http://A.com/x#top"), normalize_url("https://a.com/x"));
        assert_ne!(normalize_url("https://a.com/x?id=1"), normalize_url("https://a.com/x?id=2"));
        assert_ne!(normalize_url("https://a.com:8443/x"), normalize_url("https://a.com/x"));
    }

    proptest! {
        #[test]
        fn dedupe_is_idempotent(picks in proptest::collection::vec((0usize..6, any::<bool>(), any::<bool>()), 0..30)) {
            let hosts = ["a.com", "b.org", "c.net"];
            let results: Vec<_> = picks
                .iter()
                .map(|(i, https, frag)| {
                    let scheme = if *https { "https" } else { "http" };
                    let frag = if *frag { "#f" } else { "" };
                    result(&format!("{scheme}://{}/p{}{frag}", hosts[i % 3], i / 3))
                })
                .collect();
            let once = dedupe_results(results);
            let twice = dedupe_results(once.clone());
            prop_assert_eq!(&once, &twice);
            let keys: HashSet<_> = once.iter().map(|r| normalize_url(&r.url)).collect();
            prop_assert_eq!(keys.len(), once.len());
        }
    }

    struct Flaky {
        failures: AtomicU32,
        calls: AtomicU32,
    }

    #[async_trait]
    impl SearchProvider for Flaky {
        async fn search(&self, _q: &str, _l: &str, limit: usize) -> Result<Vec<SearchResult>, SearchError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(SearchError::ProviderUnavailable("503".into()));
            }
            Ok((0..limit + 3).map(|i| result(&format!("https://r{i}.com/"))).collect())
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::from_millis(1),
        }
    }

    #[tokio::test]
    async fn retries_transient_failures_then_truncates() {
        let provider = Arc::new(Flaky {
            failures: AtomicU32::new(2),
            calls: AtomicU32::new(0),
        });
        let gateway = SearchGateway::new(provider.clone()).with_retry(fast_retry());
        let results = gateway.search("q", "en", 4).await.unwrap();
        assert_eq!(results.len(), 4);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn gives_up_after_two_retries() {
        let provider = Arc::new(Flaky {
            failures: AtomicU32::new(3),
            calls: AtomicU32::new(0),
        });
        let gateway = SearchGateway::new(provider.clone()).with_retry(fast_retry());
        assert!(matches!(
            gateway.search("q", "en", 4).await,
            Err(SearchError::ProviderUnavailable(_))
        ));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn empty_query_is_rejected() {
        let gateway = SearchGateway::new(Arc::new(MockSearchProvider::default()));
        assert_eq!(gateway.search("  ", "en", 3).await, Err(SearchError::EmptyQuery));
    }

    struct Stalling;

    #[async_trait]
    impl SearchProvider for Stalling {
        async fn search(&self, _q: &str, _l: &str, _limit: usize) -> Result<Vec<SearchResult>, SearchError> {
            tokio::time::sleep(Duration::from_secs(60)).await;
            Ok(vec![])
        }
    }

    #[tokio::test]
    async fn stalled_provider_times_out() {
        let gateway = SearchGateway::new(Arc::new(Stalling))
            .with_retry(fast_retry())
            .with_timeout(Duration::from_millis(5));
        assert_eq!(gateway.search("q", "en", 3).await, Err(SearchError::Timeout));
    }

    #[tokio::test]
    async fn invalid_urls_are_dropped() {
        let fixture = SearchFixture::from_json(
            r#"{"q": [{"url": "nope", "title": "x"}, {"url": "https://ok.com/", "title": "y"}]}"#,
        )
        .unwrap();
        let gateway = SearchGateway::new(Arc::new(MockSearchProvider::new(fixture)));
        let results = gateway.search("q", "en", 5).await.unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].url, "https://ok.com/");
    }
}

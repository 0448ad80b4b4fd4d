use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::Deserialize;

use super::{SearchError, SearchProvider, SearchResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFault {
    Unavailable,
    Quota,
    Timeout,
}

impl MockFault {
    fn to_error(self) -> SearchError {
        match self {
            MockFault::Unavailable => SearchError::ProviderUnavailable("scripted failure".into()),
            MockFault::Quota => SearchError::QuotaExceeded,
            MockFault::Timeout => SearchError::Timeout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FixtureEntry {
    Results(Vec<SearchResult>),
    /// Fails `times` times (forever when absent), then returns `results`.
    Fault {
        error: MockFault,
        #[serde(default)]
        times: Option<u32>,
        #[serde(default)]
        results: Vec<SearchResult>,
    },
}

/// Query → scripted response. Keys match queries after trimming and
/// lowercasing; unknown queries return no results.
///
/// ```json
/// { "moon landing": [{"url": "https://nasa.gov/apollo", "title": "Apollo", "snippet": "..."}],
///   "flaky query": {"error": "unavailable", "times": 1, "results": []} }
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchFixture {
    entries: HashMap<String, FixtureEntry>,
}

fn fixture_key(query: &str) -> String {
    query.trim().to_lowercase()
}

impl SearchFixture {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let raw: HashMap<String, FixtureEntry> = serde_json::from_str(json)?;
        Ok(Self {
            entries: raw.into_iter().map(|(k, v)| (fixture_key(&k), v)).collect(),
        })
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn insert(&mut self, query: &str, results: Vec<SearchResult>) {
        self.entries.insert(fixture_key(query), FixtureEntry::Results(results));
    }

    pub fn insert_fault(&mut self, query: &str, fault: MockFault, times: Option<u32>) {
        self.entries.insert(
            fixture_key(query),
            FixtureEntry::Fault {
                error: fault,
                times,
                results: Vec::new(),
            },
        );
    }

    pub fn get(&self, query: &str) -> Option<&FixtureEntry> {
        self.entries.get(&fixture_key(query))
    }
}

/// Search provider replaying a [`SearchFixture`]. Records every call.
#[derive(Debug, Default)]
pub struct MockSearchProvider {
    fixture: SearchFixture,
    fail_all: bool,
    failures_served: Mutex<HashMap<String, u32>>,
    calls: Mutex<Vec<(String, String)>>,
}

impl MockSearchProvider {
    pub fn new(fixture: SearchFixture) -> Self {
        Self {
            fixture,
            ..Self::default()
        }
    }

    /// A provider whose every call fails with `ProviderUnavailable`.
    pub fn failing() -> Self {
        Self {
            fail_all: true,
            ..Self::default()
        }
    }

    /// `(query, locale)` of every call so far, in order.
    pub fn calls(&self) -> Vec<(String, String)> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl SearchProvider for MockSearchProvider {
    async fn search(&self, query: &str, locale: &str, limit: usize) -> Result<Vec<SearchResult>, SearchError> {
        self.calls
            .lock()
            .unwrap()
            .push((query.to_string(), locale.to_string()));
        if self.fail_all {
            return Err(SearchError::ProviderUnavailable("scripted failure".into()));
        }
        let results = match self.fixture.get(query) {
            None => Vec::new(),
            Some(FixtureEntry::Results(results)) => results.clone(),
            Some(FixtureEntry::Fault { error, times, results }) => {
                let mut served = self.failures_served.lock().unwrap();
                let count = served.entry(fixture_key(query)).or_insert(0);
                if times.is_none_or(|t| *count < t) {
                    *count += 1;
                    return Err(error.to_error());
                }
                results.clone()
            }
        };
        Ok(results.into_iter().take(limit).collect())
    }
}

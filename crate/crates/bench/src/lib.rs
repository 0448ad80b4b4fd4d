//! Synthetic inputs shared by the benchmarks.

use std::sync::Arc;

use factcheck_core::llm::{LlmGateway, TranscriptMock};
use factcheck_core::search::{MockSearchProvider, RetryPolicy, SearchFixture, SearchGateway, SearchResult};
use factcheck_core::{AgentConfig, CredibilityTable, RetrievalAgent, SourceCandidate};

const WORDS: [&str; 24] = [
    "election", "fraud", "vaccine", "autism", "climate", "warming", "border", "migrants", "tax", "inflation",
    "energy", "prices", "school", "shooting", "storm", "flood", "virus", "lab", "wage", "strike", "moon",
    "landing", "water", "fluoride",
];

/// Deterministic pseudo-random claim texts with heavy vocabulary overlap.
pub fn claim_corpus(n: usize) -> Vec<String> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..n)
        .map(|_| {
            let len = 5 + (next() % 8) as usize;
            (0..len).map(|_| WORDS[(next() % WORDS.len() as u64) as usize]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

pub fn domains(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("outlet{i}.example")).collect()
}

/// A table rating every other domain in `domains(n)`.
pub fn half_rated_table(n: usize) -> CredibilityTable {
    let entries: Vec<(String, f64)> = domains(n)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 0)
        .map(|(i, d)| (d, (i % 10) as f64 / 10.0))
        .collect();
    CredibilityTable::from_entries("bench", entries).expect("valid ratings")
}

pub fn sources(n: usize, distinct_domains: usize) -> Vec<SourceCandidate> {
    let domains = domains(distinct_domains);
    (0..n)
        .map(|i| {
            let domain = domains[i % distinct_domains].clone();
            SourceCandidate {
                url: format!("https://{domain}/story/{i}"),
                domain,
                title: format!("Story {i}"),
                snippet: String::new(),
                credibility: None,
                query: "q".into(),
            }
        })
        .collect()
}

/// An agent that searches `turns` times with `queries` queries each, then
/// finalizes. Every query returns five fresh results.
pub fn scripted_agent(turns: usize, queries: usize) -> RetrievalAgent {
    let mut replies = Vec::new();
    let mut fixture = SearchFixture::default();
    for t in 0..turns {
        let names: Vec<String> = (0..queries).map(|q| format!("turn {t} query {q}")).collect();
        for name in &names {
            let results = (0..5)
                .map(|r| SearchResult {
                    url: format!("https://outlet{r}.example/{}/{r}", name.replace(' ', "-")),
                    title: name.clone(),
                    snippet: "snippet".into(),
                })
                .collect();
            fixture.insert(name, results);
        }
        replies.push(format!("SEARCH: {}", serde_json_array(&names)));
    }
    replies.push("FINAL".into());
    replies.push("SCORE: 64\nEXPLANATION: Mostly supported by [1] and [2].".into());
    RetrievalAgent::new(
        LlmGateway::new(Arc::new(TranscriptMock::new(replies))),
        SearchGateway::new(Arc::new(MockSearchProvider::new(fixture))).with_retry(RetryPolicy::none()),
        Arc::new(half_rated_table(10)),
        AgentConfig {
            max_iterations: turns as u32 + 1,
            max_results_per_query: 5,
            max_queries_per_turn: queries,
        },
    )
    .expect("valid config")
}

fn serde_json_array(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("\"{s}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

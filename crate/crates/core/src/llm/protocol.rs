//! Line protocol between the agent and the model.
//!
//! Agent turns answer with `SEARCH: ["q1", "q2"]` or `FINAL`; the first
//! recognized line wins. Verdicts carry a `SCORE: <integer>` line and an
//! `EXPLANATION:` block that runs to the end of the text (or to the score
//! line, when the score comes last).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Score};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no SEARCH or FINAL directive: {0}")]
    MalformedDirective(String),
    #[error("malformed verdict: {0}")]
    MalformedVerdict(String),
    #[error("score {0} is outside 0..=100")]
    ScoreOutOfRange(i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentDirective {
    /// Never empty.
    Search { queries: Vec<String> },
    Finalize,
}

impl AgentDirective {
    /// Truncates a search directive to at most `max` queries (at least one
    /// is always kept).
    pub fn limit_queries(self, max: usize) -> Self {
        match self {
            AgentDirective::Search { mut queries } => {
                queries.truncate(max.max(1));
                AgentDirective::Search { queries }
            }
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub score: Score,
    pub explanation: String,
}

impl VerdictPayload {
    pub fn new(score: Score, explanation: impl Into<String>) -> Result<Self, ProtocolError> {
        let explanation = normalize_explanation(&explanation.into());
        if explanation.is_empty() {
            return Err(ProtocolError::MalformedVerdict("empty explanation".into()));
        }
        Ok(Self { score, explanation })
    }
}

/// Trailing whitespace is dropped from every line and the block is trimmed.
fn normalize_explanation(text: &str) -> String {
    text.lines().map(str::trim_end).collect::<Vec<_>>().join("\n").trim().to_string()
}

fn clean_line(line: &str) -> &str {
    line.trim().trim_matches(|c| c == '`' || c == '*').trim()
}

fn strip_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let head = line.get(..marker.len())?;
    head.eq_ignore_ascii_case(marker)
        .then(|| line[marker.len()..].trim_start_matches(['`', '*']))
}

fn is_final(line: &str) -> bool {
    strip_marker(line, "FINAL").is_some_and(|rest| rest.chars().all(|c| c.is_ascii_punctuation() || c.is_whitespace()))
}

pub fn parse_agent_directive(text: &str) -> Result<AgentDirective, ProtocolError> {
    for raw in text.lines() {
        let line = clean_line(raw);
        if let Some(rest) = strip_marker(line, "SEARCH:") {
            let queries: Vec<String> = serde_json::from_str(rest.trim())
                .map_err(|e| ProtocolError::MalformedDirective(format!("query array: {e}")))?;
            let mut cleaned: Vec<String> = Vec::with_capacity(queries.len());
            for query in queries {
                let query = query.trim().to_string();
                if !query.is_empty() && !cleaned.contains(&query) {
                    cleaned.push(query);
                }
            }
            if cleaned.is_empty() {
                return Err(ProtocolError::MalformedDirective("SEARCH without queries".into()));
            }
            return Ok(AgentDirective::Search { queries: cleaned });
        }
        if is_final(line) {
            return Ok(AgentDirective::Finalize);
        }
    }
    Err(ProtocolError::MalformedDirective(preview(text)))
}

fn preview(text: &str) -> String {
    let mut out: String = text.trim().chars().take(80).collect();
    if text.trim().chars().count() > 80 {
        out.push('…');
    }
    out
}

pub fn parse_verdict(text: &str) -> Result<VerdictPayload, ProtocolError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut score_line = None;
    let mut value = None;
    for (idx, raw) in lines.iter().enumerate() {
        if let Some(rest) = strip_marker(clean_line(raw), "SCORE:") {
            let digits = rest.trim().trim_end_matches('%').trim();
            let parsed = digits
                .parse::<i64>()
                .map_err(|_| ProtocolError::MalformedVerdict(format!("score {:?} is not an integer", rest.trim())))?;
            score_line = Some(idx);
            value = Some(parsed);
            break;
        }
    }
    let (Some(score_idx), Some(value)) = (score_line, value) else {
        return Err(ProtocolError::MalformedVerdict("missing SCORE line".into()));
    };

    let explanation_start = lines
        .iter()
        .enumerate()
        .find_map(|(idx, raw)| strip_marker(clean_line(raw), "EXPLANATION:").map(|rest| (idx, rest)));
    let Some((start, first)) = explanation_start else {
        return Err(ProtocolError::MalformedVerdict("missing EXPLANATION block".into()));
    };
    let end = if score_idx > start { score_idx } else { lines.len() };
    let mut block = vec![first.trim_start()];
    block.extend(lines[start + 1..end].iter().copied());
    let explanation = normalize_explanation(&block.join("\n"));
    if explanation.is_empty() {
        return Err(ProtocolError::MalformedVerdict("empty explanation".into()));
    }

    let score = Score::new(value).map_err(|e| match e {
        ModelError::ScoreOutOfRange(v) => ProtocolError::ScoreOutOfRange(v),
        other => ProtocolError::MalformedVerdict(other.to_string()),
    })?;
    Ok(VerdictPayload { score, explanation })
}

/// Canonical rendering accepted by [`parse_verdict`].
pub fn format_verdict(payload: &VerdictPayload) -> String {
    format!("SCORE: {}\nEXPLANATION: {}", payload.score, payload.explanation)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn search_directive() {
        assert_eq!(
            parse_agent_directive("SEARCH: [\"vaccine claim fact check\"]").unwrap(),
            AgentDirective::Search {
                queries: vec!["vaccine claim fact check".into()]
            }
        );
    }

    #[test]
    fn final_directive() {
        assert_eq!(parse_agent_directive("FINAL").unwrap(), AgentDirective::Finalize);
        assert_eq!(parse_agent_directive("Thinking...\n**FINAL**.").unwrap(), AgentDirective::Finalize);
        assert!(parse_agent_directive("FINALLY I know").is_err());
    }

    #[test]
    fn chatter_is_malformed() {
        assert!(matches!(
            parse_agent_directive("I think maybe…"),
            Err(ProtocolError::MalformedDirective(_))
        ));
        assert!(matches!(
            parse_agent_directive("SEARCH: not json"),
            Err(ProtocolError::MalformedDirective(_))
        ));
        assert!(matches!(
            parse_agent_directive("SEARCH: [\"  \", \"\"]"),
            Err(ProtocolError::MalformedDirective(_))
        ));
    }

    #[test]
    fn first_recognized_line_wins() {
        assert_eq!(
            parse_agent_directive("Let me check.\nFINAL\nSEARCH: [\"x\"]").unwrap(),
            AgentDirective::Finalize
        );
        assert_eq!(
            parse_agent_directive("search: [\"a\", \"a\", \"b\"]\nFINAL").unwrap(),
            AgentDirective::Search {
                queries: vec!["a".into(), "b".into()]
            }
        );
    }

    #[test]
    fn query_limit() {
        let d = parse_agent_directive(r#"SEARCH: ["a","b","c","d"]"#).unwrap().limit_queries(3);
        assert_eq!(
            d,
            AgentDirective::Search {
                queries: vec!["a".into(), "b".into(), "c".into()]
            }
        );
    }

    #[test]
    fn verdict_round_trip_example() {
        let v = parse_verdict("SCORE: 72\nEXPLANATION: multiple outlets confirm…").unwrap();
        assert_eq!(v.score.value(), 72);
        assert_eq!(v.explanation, "multiple outlets confirm…");
    }

    #[test]
    fn verdict_errors() {
        assert_eq!(
            parse_verdict("SCORE: 140\nEXPLANATION: x"),
            Err(ProtocolError::ScoreOutOfRange(140))
        );
        assert!(matches!(parse_verdict("no markers here"), Err(ProtocolError::MalformedVerdict(_))));
        assert!(matches!(parse_verdict("SCORE: 50"), Err(ProtocolError::MalformedVerdict(_))));
        assert!(matches!(
            parse_verdict("SCORE: high\nEXPLANATION: x"),
            Err(ProtocolError::MalformedVerdict(_))
        ));
        assert!(matches!(
            parse_verdict("SCORE: 50\nEXPLANATION:   "),
            Err(ProtocolError::MalformedVerdict(_))
        ));
    }

    #[test]
    fn verdict_layout_variants() {
        let v = parse_verdict("Here you go.\nEXPLANATION: line one\nline two\nSCORE: 35%").unwrap();
        assert_eq!(v.score.value(), 35);
        assert_eq!(v.explanation, "line one\nline two");

        let v = parse_verdict("**SCORE:** 10\nEXPLANATION:\n  indented body").unwrap();
        assert_eq!(v.score.value(), 10);
        assert_eq!(v.explanation, "indented body");
    }

    fn explanation_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-zA-Z0-9 ,.'éü-]{1,30}", 1..4).prop_filter_map("canonical", |lines| {
            let text = lines.join("\n").trim().to_string();
            let has_marker = text
                .lines()
                .any(|l| strip_marker(clean_line(l), "SCORE:").is_some() || clean_line(l).is_empty());
            (!text.is_empty() && !has_marker).then_some(text)
        })
    }

    proptest! {
        #[test]
        fn verdict_format_parse_round_trip(score in 0i64..=100, explanation in explanation_strategy()) {
            let payload = VerdictPayload::new(Score::new(score).unwrap(), explanation).unwrap();
            prop_assert_eq!(parse_verdict(&format_verdict(&payload)).unwrap(), payload);
        }

        #[test]
        fn search_never_has_zero_queries(text in ".{0,60}", queries in proptest::collection::vec(".{0,8}", 0..4)) {
            let json = serde_json::to_string(&queries).unwrap();
            for candidate in [text.clone(), format!("SEARCH: {json}"), format!("{text}\nSEARCH: {json}")] {
                if let Ok(AgentDirective::Search { queries }) = parse_agent_directive(&candidate) {
                    prop_assert!(!queries.is_empty());
                    prop_assert!(queries.iter().all(|q| !q.trim().is_empty()));
                }
            }
        }
    }
}

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::{CompletionRequest, LlmError, LlmProvider};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmFault {
    Unavailable,
    ContextTooLong,
    Timeout,
}

/// One scripted step of a transcript.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Fault { error: LlmFault },
    Delayed { reply: String, delay_ms: u64 },
}

impl From<&str> for ScriptedReply {
    fn from(text: &str) -> Self {
        ScriptedReply::Text(text.to_string())
    }
}

impl From<String> for ScriptedReply {
    fn from(text: String) -> Self {
        ScriptedReply::Text(text)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptFile {
    Replies(Vec<ScriptedReply>),
    Full {
        replies: Vec<ScriptedReply>,
        #[serde(default)]
        max_context_chars: Option<usize>,
        #[serde(default)]
        repeat_last: bool,
    },
}

/// Language model replaying an ordered list of scripted replies, one per
/// call. Every request is recorded.
///
/// The transcript file is either a JSON array of replies or an object
/// `{"replies": [...], "max_context_chars": 20000, "repeat_last": true}`.
/// A reply is a string, `{"error": "unavailable" | "context_too_long" |
/// "timeout"}`, or `{"reply": "...", "delay_ms": 500}`.
#[derive(Debug, Default)]
pub struct TranscriptMock {
    replies: Vec<ScriptedReply>,
    max_context_chars: Option<usize>,
    repeat_last: bool,
    state: Mutex<MockState>,
}

#[derive(Debug, Default)]
struct MockState {
    next: usize,
    requests: Vec<CompletionRequest>,
}

impl TranscriptMock {
    pub fn new(replies: Vec<String>) -> Self {
        Self::from_replies(replies.into_iter().map(ScriptedReply::Text).collect())
    }

    pub fn from_replies(replies: Vec<ScriptedReply>) -> Self {
        Self {
            replies,
            ..Self::default()
        }
    }

    /// Answers every call with the same text.
    pub fn repeating(reply: impl Into<String>) -> Self {
        Self {
            replies: vec![ScriptedReply::Text(reply.into())],
            repeat_last: true,
            ..Self::default()
        }
    }

    /// A mock whose every call fails with `ProviderUnavailable`.
    pub fn failing() -> Self {
        Self {
            replies: vec![ScriptedReply::Fault {
                error: LlmFault::Unavailable,
            }],
            repeat_last: true,
            ..Self::default()
        }
    }

    pub fn with_max_context_chars(mut self, limit: usize) -> Self {
        self.max_context_chars = Some(limit);
        self
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str(json)? {
            TranscriptFile::Replies(replies) => Self::from_replies(replies),
            TranscriptFile::Full {
                replies,
                max_context_chars,
                repeat_last,
            } => Self {
                replies,
                max_context_chars,
                repeat_last,
                ..Self::default()
            },
        })
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Number of calls served so far.
    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.state.lock().unwrap().requests.clone()
    }
}

#[async_trait]
impl LlmProvider for TranscriptMock {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let step = {
            let mut state = self.state.lock().unwrap();
            state.requests.push(request.clone());
            if let Some(limit) = self.max_context_chars {
                if request.char_len() > limit {
                    return Err(LlmError::ContextTooLong);
                }
            }
            let index = if self.repeat_last {
                state.next.min(self.replies.len().saturating_sub(1))
            } else {
                state.next
            };
            state.next += 1;
            self.replies.get(index).cloned()
        };
        match step {
            None => Err(LlmError::ProviderUnavailable("transcript exhausted".into())),
            Some(ScriptedReply::Text(text)) => Ok(text),
            Some(ScriptedReply::Fault { error }) => Err(match error {
                LlmFault::Unavailable => LlmError::ProviderUnavailable("scripted failure".into()),
                LlmFault::ContextTooLong => LlmError::ContextTooLong,
                LlmFault::Timeout => LlmError::Timeout,
            }),
            Some(ScriptedReply::Delayed { reply, delay_ms }) => {
                tokio::time::sleep(Duration::from_millis(delay_ms)).await;
                Ok(reply)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Message;
    use super::*;

    fn request(text: &str) -> CompletionRequest {
        CompletionRequest::new("sys", vec![Message::user(text)])
    }

    #[tokio::test]
    async fn replays_steps_in_order() {
        let mock = TranscriptMock::new(vec!["one".into(), "two".into(), "three".into()]);
        assert_eq!(mock.complete(&request("a")).await.unwrap(), "one");
        assert_eq!(mock.complete(&request("b")).await.unwrap(), "two");
        assert_eq!(mock.complete(&request("c")).await.unwrap(), "three");
        assert!(matches!(
            mock.complete(&request("d")).await,
            Err(LlmError::ProviderUnavailable(_))
        ));
        assert_eq!(mock.calls(), 4);
        assert_eq!(mock.requests()[2].messages[0].content, "c");
    }

    #[tokio::test]
    async fn context_limit() {
        let mock = TranscriptMock::new(vec!["ok".into()]).with_max_context_chars(10);
        assert_eq!(mock.complete(&request(&"x".repeat(20))).await, Err(LlmError::ContextTooLong));
    }

    #[tokio::test]
    async fn failing_and_repeating() {
        assert!(matches!(
            TranscriptMock::failing().complete(&request("a")).await,
            Err(LlmError::ProviderUnavailable(_))
        ));
        let mock = TranscriptMock::repeating("SEARCH: [\"q\"]");
        for _ in 0..7 {
            assert_eq!(mock.complete(&request("a")).await.unwrap(), "SEARCH: [\"q\"]");
        }
    }

    #[tokio::test]
    async fn parses_both_file_shapes() {
        let list = TranscriptMock::from_json(r#"["FINAL", {"error": "timeout"}]"#).unwrap();
        assert_eq!(list.complete(&request("a")).await.unwrap(), "FINAL");
        assert_eq!(list.complete(&request("a")).await, Err(LlmError::Timeout));

        let full = TranscriptMock::from_json(
            r#"{"replies": [{"reply": "late", "delay_ms": 1}], "max_context_chars": 100, "repeat_last": true}"#,
        )
        .unwrap();
        assert_eq!(full.complete(&request("a")).await.unwrap(), "late");
        assert_eq!(full.complete(&request("a")).await.unwrap(), "late");
    }
}

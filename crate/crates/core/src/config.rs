//! Service settings from a `KEY=value` file, overridable by environment
//! variables of the same names.
//!
//! ```text
//! # comments and blank lines are ignored
//! BIND_ADDR=127.0.0.1:8080
//! STORAGE=sqlite
//! DATABASE_URL=sqlite://factcheck.db
//! LLM_MOCK_TRANSCRIPT=fixtures/transcript.json
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::agent::AgentConfig;
use crate::credibility::RatingScale;
use crate::llm::LlmProviderConfig;
use crate::model::{DEFAULT_MAX_CLAIM_LEN, TagVocabulary};
use crate::persistence::StorageConfig;
use crate::search::SearchProviderConfig;

/// Every key the service understands.
pub const KEYS: &[&str] = &[
    "BIND_ADDR",
    "STORAGE",
    "DATABASE_URL",
    "RATE_LIMIT_PER_MIN",
    "CREDIBILITY_TABLE_PATH",
    "CREDIBILITY_SCALE",
    "LLM_API_KEY",
    "LLM_ENDPOINT",
    "LLM_MODEL_NAME",
    "LLM_TEMPERATURE",
    "LLM_TIMEOUT_SECS",
    "LLM_MOCK_TRANSCRIPT",
    "SEARCH_API_KEY",
    "SEARCH_ENDPOINT",
    "SEARCH_TIMEOUT_SECS",
    "SEARCH_MOCK_FIXTURE",
    "AGENT_MAX_ITERATIONS",
    "AGENT_MAX_RESULTS_PER_QUERY",
    "AGENT_MAX_QUERIES_PER_TURN",
    "CLAIM_MAX_LEN",
    "FEEDBACK_TAGS",
    "TOKEN_SECRET",
    "TOKEN_TTL_SECS",
    "DEV_LOGIN",
    "PRODUCTION",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected KEY=value")]
    Syntax { line: usize },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("invalid {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("missing {0}")]
    Missing(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LlmBackend {
    Http(LlmProviderConfig),
    /// Scripted replies from a JSON file.
    Transcript(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchBackend {
    Http(SearchProviderConfig),
    /// Query → results fixture file.
    Fixture(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub bind_addr: SocketAddr,
    pub storage: StorageConfig,
    pub rate_limit_per_min: u32,
    pub credibility_table_path: Option<PathBuf>,
    pub credibility_scale: RatingScale,
    pub llm: LlmBackend,
    pub llm_temperature: f64,
    pub search: SearchBackend,
    pub agent: AgentConfig,
    pub claim_max_len: usize,
    pub feedback_tags: TagVocabulary,
    pub token_secret: String,
    pub token_ttl: Duration,
    /// The dev login endpoint; never enabled in production mode.
    pub dev_login: bool,
}

/// Parses `KEY=value` lines. Values may be wrapped in double quotes.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1 });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.insert(key.to_string(), value.to_string());
    }
    Ok(out)
}

struct Source<'a> {
    values: &'a BTreeMap<String, String>,
    base_dir: Option<&'a Path>,
}

impl Source<'_> {
    fn get(&self, key: &'static str) -> Option<&str> {
        self.values.get(key).map(|v| v.trim()).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                key,
                reason: format!("{v:?}: {e}"),
            }),
        }
    }

    fn flag(&self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("1" | "true" | "yes" | "on") => Ok(true),
            Some("0" | "false" | "no" | "off") => Ok(false),
            Some(other) => Err(ConfigError::Invalid {
                key,
                reason: format!("{other:?} is not a boolean"),
            }),
        }
    }

    /// Relative paths resolve against the config file's directory.
    fn path(&self, key: &'static str) -> Option<PathBuf> {
        let p = PathBuf::from(self.get(key)?);
        Some(match self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        })
    }

    fn required(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::Missing(key))
    }
}

fn positive<T: PartialOrd + Default>(key: &'static str, value: T) -> Result<T, ConfigError> {
    if value > T::default() {
        Ok(value)
    } else {
        Err(ConfigError::Invalid {
            key,
            reason: "must be positive".into(),
        })
    }
}

impl Settings {
    /// Reads `path`, then applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut values = parse_key_values(&text)?;
        for key in KEYS {
            if let Ok(v) = std::env::var(key) {
                values.insert(key.to_string(), v);
            }
        }
        Self::from_values(&values, path.parent())
    }

    /// Settings from the environment alone; relative paths resolve against
    /// the working directory.
    pub fn from_env() -> Result<Self, ConfigError> {
        let values = KEYS
            .iter()
            .filter_map(|key| std::env::var(key).ok().map(|v| (key.to_string(), v)))
            .collect();
        Self::from_values(&values, None)
    }

    pub fn from_values(values: &BTreeMap<String, String>, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let src = Source { values, base_dir };

        let bind_addr = src.parse("BIND_ADDR", SocketAddr::from(([127, 0, 0, 1], 8080)))?;
        let storage = StorageConfig::from_settings(src.get("STORAGE"), src.get("DATABASE_URL"))
            .map_err(|reason| ConfigError::Invalid { key: "STORAGE", reason })?;
        let rate_limit_per_min = positive("RATE_LIMIT_PER_MIN", src.parse("RATE_LIMIT_PER_MIN", 10u32)?)?;
        let credibility_scale = match src.get("CREDIBILITY_SCALE").map(str::to_ascii_lowercase).as_deref() {
            None | Some("unit") => RatingScale::Unit,
            Some("percent") => RatingScale::Percent,
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "CREDIBILITY_SCALE",
                    reason: format!("{other:?} (expected unit or percent)"),
                });
            }
        };

        let llm = if let Some(path) = src.path("LLM_MOCK_TRANSCRIPT") {
            LlmBackend::Transcript(path)
        } else {
            LlmBackend::Http(LlmProviderConfig {
                endpoint: src.required("LLM_ENDPOINT")?.to_string(),
                api_key: src.required("LLM_API_KEY")?.to_string(),
                model: src.required("LLM_MODEL_NAME")?.to_string(),
                timeout: Duration::from_secs(positive("LLM_TIMEOUT_SECS", src.parse("LLM_TIMEOUT_SECS", 120u64)?)?),
            })
        };
        let llm_temperature: f64 = src.parse("LLM_TEMPERATURE", crate::llm::DEFAULT_TEMPERATURE)?;
        if !(0.0..=2.0).contains(&llm_temperature) {
            return Err(ConfigError::Invalid {
                key: "LLM_TEMPERATURE",
                reason: "must lie in 0..=2".into(),
            });
        }

        let agent = AgentConfig {
            max_iterations: src.parse("AGENT_MAX_ITERATIONS", 5)?,
            max_results_per_query: src.parse("AGENT_MAX_RESULTS_PER_QUERY", 5)?,
            max_queries_per_turn: src.parse("AGENT_MAX_QUERIES_PER_TURN", 3)?,
        };
        agent.validate().map_err(|e| ConfigError::Invalid {
            key: "AGENT_MAX_ITERATIONS",
            reason: e.to_string(),
        })?;

        let search = if let Some(path) = src.path("SEARCH_MOCK_FIXTURE") {
            SearchBackend::Fixture(path)
        } else {
            let mut config =
                SearchProviderConfig::new(src.required("SEARCH_ENDPOINT")?, src.required("SEARCH_API_KEY")?);
            config.max_results_per_query = agent.max_results_per_query;
            config.timeout =
                Duration::from_secs(positive("SEARCH_TIMEOUT_SECS", src.parse("SEARCH_TIMEOUT_SECS", 15u64)?)?);
            SearchBackend::Http(config)
        };

        let production = src.flag("PRODUCTION", false)?;
        let dev_login = src.flag("DEV_LOGIN", !production)?;
        if production && dev_login {
            return Err(ConfigError::Invalid {
                key: "DEV_LOGIN",
                reason: "cannot be enabled in production".into(),
            });
        }
        let token_secret = match src.get("TOKEN_SECRET") {
            Some(s) if s.len() >= 16 => s.to_string(),
            Some(_) => {
                return Err(ConfigError::Invalid {
                    key: "TOKEN_SECRET",
                    reason: "must be at least 16 bytes".into(),
                });
            }
            None if production => return Err(ConfigError::Missing("TOKEN_SECRET")),
            None => "insecure-development-secret".to_string(),
        };

        Ok(Settings {
            bind_addr,
            storage,
            rate_limit_per_min,
            credibility_table_path: src.path("CREDIBILITY_TABLE_PATH"),
            credibility_scale,
            llm,
            llm_temperature,
            search,
            agent,
            claim_max_len: positive("CLAIM_MAX_LEN", src.parse("CLAIM_MAX_LEN", DEFAULT_MAX_CLAIM_LEN)?)?,
            feedback_tags: src.get("FEEDBACK_TAGS").map(TagVocabulary::parse_list).unwrap_or_default(),
            token_secret,
            token_ttl: Duration::from_secs(positive("TOKEN_TTL_SECS", src.parse("TOKEN_TTL_SECS", 12 * 3600u64)?)?),
            dev_login,
        })
    }
}

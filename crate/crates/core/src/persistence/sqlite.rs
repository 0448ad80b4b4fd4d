use std::collections::BTreeSet;
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{Connection, OptionalExtension, Row, params};

use super::{
    AnalysisWithSources, Repository, StorageError, StorageResult, TransitionFields, TransitionRecord,
    apply_transition,
};
use crate::model::{
    Analysis, AnalysisId, AnalysisResult, AnalysisStatus, Claim, ClaimId, Feedback, FeedbackId, Score, Source,
    SourceId, TagVocabulary, UserAccount, UserId, validate_rating,
};

const SCHEMA: &str = r#"
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS users (
    id TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    role TEXT NOT NULL CHECK (role IN ('general', 'expert', 'admin')),
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS claims (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL REFERENCES users(id),
    text TEXT NOT NULL,
    language TEXT NOT NULL,
    submitted_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS claims_submitted_at ON claims(submitted_at);
CREATE TABLE IF NOT EXISTS analyses (
    id TEXT PRIMARY KEY,
    claim_id TEXT NOT NULL REFERENCES claims(id),
    status TEXT NOT NULL,
    score INTEGER CHECK (score BETWEEN 0 AND 100),
    explanation TEXT,
    error_detail TEXT,
    iterations_used INTEGER NOT NULL DEFAULT 0,
    created_at TEXT NOT NULL,
    completed_at TEXT
);
CREATE INDEX IF NOT EXISTS analyses_status_created ON analyses(status, created_at);
CREATE INDEX IF NOT EXISTS analyses_claim ON analyses(claim_id);
CREATE TABLE IF NOT EXISTS analysis_transitions (
    analysis_id TEXT NOT NULL REFERENCES analyses(id),
    seq INTEGER NOT NULL,
    status TEXT NOT NULL,
    at TEXT NOT NULL,
    PRIMARY KEY (analysis_id, seq)
);
CREATE TABLE IF NOT EXISTS sources (
    id TEXT PRIMARY KEY,
    analysis_id TEXT NOT NULL REFERENCES analyses(id),
    seq INTEGER NOT NULL,
    url TEXT NOT NULL,
    domain TEXT NOT NULL,
    title TEXT NOT NULL,
    snippet TEXT NOT NULL,
    credibility REAL CHECK (credibility IS NULL OR (credibility >= 0.0 AND credibility <= 1.0)),
    retrieved_at TEXT NOT NULL,
    query TEXT NOT NULL,
    UNIQUE (analysis_id, url)
);
CREATE TABLE IF NOT EXISTS feedback (
    id TEXT PRIMARY KEY,
    analysis_id TEXT NOT NULL REFERENCES analyses(id),
    user_id TEXT NOT NULL REFERENCES users(id),
    rating INTEGER NOT NULL CHECK (rating BETWEEN 1 AND 5),
    tags TEXT NOT NULL,
    comment TEXT,
    created_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS feedback_created ON feedback(created_at);
"#;

/// Relational backend on SQLite. One connection guarded by a mutex.
pub struct SqliteRepository {
    conn: Mutex<Connection>,
    vocabulary: TagVocabulary,
}

fn unavailable(err: rusqlite::Error) -> StorageError {
    StorageError::StorageUnavailable(err.to_string())
}

fn ts(at: &DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Nanos, true)
}

fn parse_ts(text: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text)
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e)))
}

fn conversion<E: std::error::Error + Send + Sync + 'static>(err: E) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(err))
}

fn text_err(msg: String) -> rusqlite::Error {
    conversion(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

fn parse_col<T: std::str::FromStr>(row: &Row<'_>, idx: usize) -> rusqlite::Result<T>
where
    T::Err: std::fmt::Display,
{
    let text: String = row.get(idx)?;
    text.parse::<T>().map_err(|e| text_err(format!("column {idx}: {e}")))
}

fn user_from_row(row: &Row<'_>) -> rusqlite::Result<UserAccount> {
    Ok(UserAccount {
        id: parse_col(row, 0)?,
        display_name: row.get(1)?,
        role: parse_col(row, 2)?,
        created_at: parse_ts(&row.get::<_, String>(3)?)?,
    })
}

const CLAIM_COLUMNS: &str = "c.id, c.user_id, c.text, c.language, c.submitted_at";

fn claim_from_row(row: &Row<'_>, offset: usize) -> rusqlite::Result<Claim> {
    Ok(Claim {
        id: parse_col(row, offset)?,
        user_id: parse_col(row, offset + 1)?,
        text: row.get(offset + 2)?,
        language: row.get(offset + 3)?,
        submitted_at: parse_ts(&row.get::<_, String>(offset + 4)?)?,
    })
}

const ANALYSIS_COLUMNS: &str =
    "a.id, a.claim_id, a.status, a.score, a.explanation, a.error_detail, a.iterations_used, a.created_at, a.completed_at";

fn analysis_from_row(row: &Row<'_>, offset: usize) -> rusqlite::Result<Analysis> {
    let score: Option<i64> = row.get(offset + 3)?;
    let explanation: Option<String> = row.get(offset + 4)?;
    let result = match (score, explanation) {
        (Some(score), Some(explanation)) => {
            let score = Score::new(score).map_err(conversion)?;
            Some(AnalysisResult::new(score, explanation).map_err(conversion)?)
        }
        _ => None,
    };
    let completed_at: Option<String> = row.get(offset + 8)?;
    Ok(Analysis {
        id: parse_col(row, offset)?,
        claim_id: parse_col(row, offset + 1)?,
        status: parse_col(row, offset + 2)?,
        result,
        error_detail: row.get(offset + 5)?,
        iterations_used: row.get(offset + 6)?,
        created_at: parse_ts(&row.get::<_, String>(offset + 7)?)?,
        completed_at: completed_at.as_deref().map(parse_ts).transpose()?,
    })
}

fn source_from_row(row: &Row<'_>) -> rusqlite::Result<Source> {
    Ok(Source {
        id: parse_col::<SourceId>(row, 0)?,
        analysis_id: parse_col(row, 1)?,
        url: row.get(2)?,
        domain: row.get(3)?,
        title: row.get(4)?,
        snippet: row.get(5)?,
        credibility: row.get(6)?,
        retrieved_at: parse_ts(&row.get::<_, String>(7)?)?,
        query: row.get(8)?,
    })
}

fn feedback_from_row(row: &Row<'_>) -> rusqlite::Result<Feedback> {
    let tags: String = row.get(4)?;
    let tags: BTreeSet<String> = serde_json::from_str(&tags).map_err(conversion)?;
    Ok(Feedback {
        id: parse_col::<FeedbackId>(row, 0)?,
        analysis_id: parse_col(row, 1)?,
        user_id: parse_col(row, 2)?,
        rating: row.get(3)?,
        tags,
        comment: row.get(5)?,
        created_at: parse_ts(&row.get::<_, String>(6)?)?,
    })
}

impl SqliteRepository {
    /// Opens (and migrates) the database named by `url`.
    pub fn open(url: &str, vocabulary: TagVocabulary) -> StorageResult<Self> {
        let path = url.strip_prefix("sqlite://").or_else(|| url.strip_prefix("sqlite:")).unwrap_or(url);
        let conn = if path == ":memory:" {
            Connection::open_in_memory()
        } else {
            Connection::open(path)
        }
        .map_err(unavailable)?;
        conn.execute_batch(SCHEMA).map_err(unavailable)?;
        Ok(Self {
            conn: Mutex::new(conn),
            vocabulary,
        })
    }

    pub fn in_memory(vocabulary: TagVocabulary) -> StorageResult<Self> {
        Self::open(":memory:", vocabulary)
    }

    fn with_conn<T>(&self, f: impl FnOnce(&mut Connection) -> StorageResult<T>) -> StorageResult<T> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut conn)
    }

    fn load_analysis(conn: &Connection, id: AnalysisId) -> StorageResult<Analysis> {
        conn.query_row(
            &format!("SELECT {ANALYSIS_COLUMNS} FROM analyses a WHERE a.id = ?1"),
            params![id.to_string()],
            |row| analysis_from_row(row, 0),
        )
        .optional()
        .map_err(unavailable)?
        .ok_or_else(|| StorageError::not_found("analysis", id))
    }

    fn exists(conn: &Connection, table: &str, id: &str) -> StorageResult<bool> {
        conn.query_row(&format!("SELECT 1 FROM {table} WHERE id = ?1"), params![id], |_| Ok(()))
            .optional()
            .map(|r| r.is_some())
            .map_err(unavailable)
    }
}

impl Repository for SqliteRepository {
    fn save_user(&self, user: &UserAccount) -> StorageResult<UserId> {
        self.with_conn(|conn| {
            let existing = conn
                .query_row(
                    "SELECT id, display_name, role, created_at FROM users WHERE id = ?1",
                    params![user.id.to_string()],
                    user_from_row,
                )
                .optional()
                .map_err(unavailable)?;
            match existing {
                Some(existing) if &existing == user => Ok(user.id),
                Some(_) => Err(StorageError::Conflict(format!("user {}", user.id))),
                None => {
                    conn.execute(
                        "INSERT INTO users (id, display_name, role, created_at) VALUES (?1, ?2, ?3, ?4)",
                        params![user.id.to_string(), user.display_name, user.role.as_str(), ts(&user.created_at)],
                    )
                    .map_err(unavailable)?;
                    Ok(user.id)
                }
            }
        })
    }

    fn get_user(&self, id: UserId) -> StorageResult<UserAccount> {
        self.with_conn(|conn| {
            conn.query_row(
                "SELECT id, display_name, role, created_at FROM users WHERE id = ?1",
                params![id.to_string()],
                user_from_row,
            )
            .optional()
            .map_err(unavailable)?
            .ok_or_else(|| StorageError::not_found("user", id))
        })
    }

    fn approve_expert(&self, id: UserId) -> StorageResult<UserAccount> {
        let mut user = self.get_user(id)?;
        user.approve_expert();
        self.with_conn(|conn| {
            conn.execute(
                "UPDATE users SET role = ?2 WHERE id = ?1",
                params![id.to_string(), user.role.as_str()],
            )
            .map_err(unavailable)?;
            Ok(user)
        })
    }

    fn save_claim(&self, claim: &Claim) -> StorageResult<ClaimId> {
        self.with_conn(|conn| {
            if !Self::exists(conn, "users", &claim.user_id.to_string())? {
                return Err(StorageError::UnknownUser(claim.user_id));
            }
            let existing = conn
                .query_row(
                    &format!("SELECT {CLAIM_COLUMNS} FROM claims c WHERE c.id = ?1"),
                    params![claim.id.to_string()],
                    |row| claim_from_row(row, 0),
                )
                .optional()
                .map_err(unavailable)?;
            match existing {
                Some(existing) if &existing == claim => Ok(claim.id),
                Some(_) => Err(StorageError::Conflict(format!("claim {}", claim.id))),
                None => {
                    conn.execute(
                        "INSERT INTO claims (id, user_id, text, language, submitted_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                        params![
                            claim.id.to_string(),
                            claim.user_id.to_string(),
                            claim.text,
                            claim.language,
                            ts(&claim.submitted_at)
                        ],
                    )
                    .map_err(unavailable)?;
                    Ok(claim.id)
                }
            }
        })
    }

    fn get_claim(&self, id: ClaimId) -> StorageResult<Claim> {
        self.with_conn(|conn| {
            conn.query_row(
                &format!("SELECT {CLAIM_COLUMNS} FROM claims c WHERE c.id = ?1"),
                params![id.to_string()],
                |row| claim_from_row(row, 0),
            )
            .optional()
            .map_err(unavailable)?
            .ok_or_else(|| StorageError::not_found("claim", id))
        })
    }

    fn create_analysis(&self, analysis: &Analysis) -> StorageResult<AnalysisId> {
        analysis.check_invariants()?;
        if analysis.status != AnalysisStatus::Pending {
            return Err(StorageError::Invariant("new analyses must be pending".into()));
        }
        self.with_conn(|conn| {
            if !Self::exists(conn, "claims", &analysis.claim_id.to_string())? {
                return Err(StorageError::not_found("claim", analysis.claim_id));
            }
            if Self::exists(conn, "analyses", &analysis.id.to_string())? {
                return Err(StorageError::Conflict(format!("analysis {}", analysis.id)));
            }
            let tx = conn.transaction().map_err(unavailable)?;
            tx.execute(
                "INSERT INTO analyses (id, claim_id, status, iterations_used, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    analysis.id.to_string(),
                    analysis.claim_id.to_string(),
                    analysis.status.as_str(),
                    analysis.iterations_used,
                    ts(&analysis.created_at)
                ],
            )
            .map_err(unavailable)?;
            tx.execute(
                "INSERT INTO analysis_transitions (analysis_id, seq, status, at) VALUES (?1, 0, ?2, ?3)",
                params![analysis.id.to_string(), analysis.status.as_str(), ts(&analysis.created_at)],
            )
            .map_err(unavailable)?;
            tx.commit().map_err(unavailable)?;
            Ok(analysis.id)
        })
    }

    fn get_analysis(&self, id: AnalysisId) -> StorageResult<Analysis> {
        self.with_conn(|conn| Self::load_analysis(conn, id))
    }

    fn transition_analysis(
        &self,
        id: AnalysisId,
        from: AnalysisStatus,
        to: AnalysisStatus,
        fields: TransitionFields,
    ) -> StorageResult<Analysis> {
        self.with_conn(|conn| {
            let tx = conn.transaction().map_err(unavailable)?;
            let stored = Self::load_analysis(&tx, id)?;
            let at = fields.at;
            let next = apply_transition(&stored, from, to, fields)?;
            let result = next.result.as_ref();
            let changed = tx
                .execute(
                    "UPDATE analyses SET status = ?3, score = ?4, explanation = ?5, error_detail = ?6, \
                     iterations_used = ?7, completed_at = ?8 WHERE id = ?1 AND status = ?2",
                    params![
                        id.to_string(),
                        from.as_str(),
                        to.as_str(),
                        result.map(|r| r.score.value()),
                        result.map(|r| r.explanation.as_str()),
                        next.error_detail,
                        next.iterations_used,
                        next.completed_at.as_ref().map(ts),
                    ],
                )
                .map_err(unavailable)?;
            if changed != 1 {
                return Err(StorageError::IllegalTransition {
                    stored: stored.status,
                    from,
                    to,
                });
            }
            tx.execute(
                "INSERT INTO analysis_transitions (analysis_id, seq, status, at) \
                 SELECT ?1, COALESCE(MAX(seq), -1) + 1, ?2, ?3 FROM analysis_transitions WHERE analysis_id = ?1",
                params![id.to_string(), to.as_str(), ts(&at)],
            )
            .map_err(unavailable)?;
            tx.commit().map_err(unavailable)?;
            Ok(next)
        })
    }

    fn transition_log(&self, id: AnalysisId) -> StorageResult<Vec<TransitionRecord>> {
        self.with_conn(|conn| {
            Self::load_analysis(conn, id)?;
            let mut stmt = conn
                .prepare("SELECT status, at FROM analysis_transitions WHERE analysis_id = ?1 ORDER BY seq")
                .map_err(unavailable)?;
            let rows = stmt
                .query_map(params![id.to_string()], |row| {
                    Ok(TransitionRecord {
                        status: parse_col(row, 0)?,
                        at: parse_ts(&row.get::<_, String>(1)?)?,
                    })
                })
                .map_err(unavailable)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(unavailable)
        })
    }

    fn unfinished_analyses(&self) -> StorageResult<Vec<Analysis>> {
        self.with_conn(|conn| {
            let mut stmt = conn
                .prepare(&format!(
                    "SELECT {ANALYSIS_COLUMNS} FROM analyses a \
                     WHERE a.status IN ('pending', 'searching', 'analyzing') ORDER BY a.created_at, a.id"
                ))
                .map_err(unavailable)?;
            let rows = stmt.query_map([], |row| analysis_from_row(row, 0)).map_err(unavailable)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(unavailable)
        })
    }

    fn add_sources(&self, analysis_id: AnalysisId, sources: &[Source]) -> StorageResult<()> {
        self.with_conn(|conn| {
            Self::load_analysis(conn, analysis_id)?;
            let tx = conn.transaction().map_err(unavailable)?;
            let base: i64 = tx
                .query_row(
                    "SELECT COALESCE(MAX(seq), -1) + 1 FROM sources WHERE analysis_id = ?1",
                    params![analysis_id.to_string()],
                    |row| row.get(0),
                )
                .map_err(unavailable)?;
            for (offset, source) in sources.iter().enumerate() {
                if source.analysis_id != analysis_id {
                    return Err(StorageError::Invariant(format!("source {} belongs to another analysis", source.id)));
                }
                if source.credibility.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
                    return Err(StorageError::Invariant(format!("credibility of {} out of range", source.url)));
                }
                let inserted = tx.execute(
                    "INSERT INTO sources (id, analysis_id, seq, url, domain, title, snippet, credibility, retrieved_at, query) \
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
                    params![
                        source.id.to_string(),
                        analysis_id.to_string(),
                        base + offset as i64,
                        source.url,
                        source.domain,
                        source.title,
                        source.snippet,
                        source.credibility,
                        ts(&source.retrieved_at),
                        source.query,
                    ],
                );
                match inserted {
                    Ok(_) => {}
                    Err(rusqlite::Error::SqliteFailure(err, _))
                        if err.code == rusqlite::ErrorCode::ConstraintViolation =>
                    {
                        return Err(StorageError::Conflict(format!("source url {}", source.url)));
                    }
                    Err(err) => return Err(unavailable(err)),
                }
            }
            tx.commit().map_err(unavailable)
        })
    }

    fn get_analysis_with_sources(&self, id: AnalysisId) -> StorageResult<AnalysisWithSources> {
        self.with_conn(|conn| {
            let analysis = Self::load_analysis(conn, id)?;
            let mut stmt = conn
                .prepare(
                    "SELECT id, analysis_id, url, domain, title, snippet, credibility, retrieved_at, query \
                     FROM sources WHERE analysis_id = ?1 ORDER BY seq",
                )
                .map_err(unavailable)?;
            let sources = stmt
                .query_map(params![id.to_string()], source_from_row)
                .map_err(unavailable)?
                .collect::<Result<Vec<_>, _>>()
                .map_err(unavailable)?;
            Ok(AnalysisWithSources::new(analysis, sources))
        })
    }

    fn record_feedback(&self, feedback: &Feedback) -> StorageResult<FeedbackId> {
        validate_rating(feedback.rating as i64)?;
        self.vocabulary.validate(&feedback.tags)?;
        self.with_conn(|conn| {
            let analysis = Self::load_analysis(conn, feedback.analysis_id)?;
            if analysis.status != AnalysisStatus::Complete {
                return Err(StorageError::AnalysisNotComplete(feedback.analysis_id));
            }
            if !Self::exists(conn, "users", &feedback.user_id.to_string())? {
                return Err(StorageError::UnknownUser(feedback.user_id));
            }
            if Self::exists(conn, "feedback", &feedback.id.to_string())? {
                return Err(StorageError::Conflict(format!("feedback {}", feedback.id)));
            }
            let tags = serde_json::to_string(&feedback.tags).expect("tags serialize");
            conn.execute(
                "INSERT INTO feedback (id, analysis_id, user_id, rating, tags, comment, created_at) \
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    feedback.id.to_string(),
                    feedback.analysis_id.to_string(),
                    feedback.user_id.to_string(),
                    feedback.rating,
                    tags,
                    feedback.comment,
                    ts(&feedback.created_at),
                ],
            )
            .map_err(unavailable)?;
            Ok(feedback.id)
        })
    }

    fn list_feedback_since(&self, since: DateTime<Utc>) -> StorageResult<Vec<Feedback>> {
        self.with_conn(|conn| {
            let mut stmt = conn
                .prepare(
                    "SELECT id, analysis_id, user_id, rating, tags, comment, created_at FROM feedback \
                     WHERE created_at >= ?1 ORDER BY created_at, id",
                )
                .map_err(unavailable)?;
            let rows = stmt.query_map(params![ts(&since)], feedback_from_row).map_err(unavailable)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(unavailable)
        })
    }

    fn list_claims_since(&self, since: DateTime<Utc>, limit: usize) -> StorageResult<Vec<(Claim, Analysis)>> {
        self.with_conn(|conn| {
            let mut stmt = conn
                .prepare(&format!(
                    "SELECT {CLAIM_COLUMNS}, {ANALYSIS_COLUMNS} FROM claims c \
                     JOIN analyses a ON a.id = (SELECT id FROM analyses WHERE claim_id = c.id ORDER BY created_at DESC LIMIT 1) \
                     WHERE c.submitted_at >= ?1 ORDER BY c.submitted_at DESC, c.id DESC LIMIT ?2"
                ))
                .map_err(unavailable)?;
            let limit = i64::try_from(limit).unwrap_or(i64::MAX);
            let rows = stmt
                .query_map(params![ts(&since), limit], |row| {
                    Ok((claim_from_row(row, 0)?, analysis_from_row(row, 5)?))
                })
                .map_err(unavailable)?;
            rows.collect::<Result<Vec<_>, _>>().map_err(unavailable)
        })
    }

    fn tag_vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }
}

//! Interpretation of a reliability score: verdict band, share recommendation
//! and the localized instruction shown next to the score.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::language::{DEFAULT_LANGUAGE, primary_subtag};
use crate::model::Score;

/// Scores strictly above this value get a positive share recommendation.
pub const SHARE_THRESHOLD: u8 = 60;

const BUILTIN_CATALOG: &str = include_str!("../data/messages.tsv");

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictBand {
    /// 0–20
    FalseUnreliable,
    /// 21–40
    MostlyUnreliable,
    /// 41–60
    Mixed,
    /// 61–80
    MostlyReliable,
    /// 81–100
    ReliableTrue,
}

impl VerdictBand {
    pub const ALL: [VerdictBand; 5] = [
        VerdictBand::FalseUnreliable,
        VerdictBand::MostlyUnreliable,
        VerdictBand::Mixed,
        VerdictBand::MostlyReliable,
        VerdictBand::ReliableTrue,
    ];

    /// Inclusive score range covered by the band.
    pub fn range(&self) -> (u8, u8) {
        match self {
            VerdictBand::FalseUnreliable => (0, 20),
            VerdictBand::MostlyUnreliable => (21, 40),
            VerdictBand::Mixed => (41, 60),
            VerdictBand::MostlyReliable => (61, 80),
            VerdictBand::ReliableTrue => (81, 100),
        }
    }

    pub fn contains(&self, score: Score) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&score.value())
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictBand::FalseUnreliable => "false_unreliable",
            VerdictBand::MostlyUnreliable => "mostly_unreliable",
            VerdictBand::Mixed => "mixed",
            VerdictBand::MostlyReliable => "mostly_reliable",
            VerdictBand::ReliableTrue => "reliable_true",
        }
    }
}

impl fmt::Display for VerdictBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictBand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerdictBand::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown verdict band {s:?}"))
    }
}

/// `true` iff the score is strictly greater than 60.
pub fn share_recommendation(score: Score) -> bool {
    score.value() > SHARE_THRESHOLD
}

pub fn score_to_band(score: Score) -> VerdictBand {
    match score.value() {
        0..=20 => VerdictBand::FalseUnreliable,
        21..=40 => VerdictBand::MostlyUnreliable,
        41..=60 => VerdictBand::Mixed,
        61..=80 => VerdictBand::MostlyReliable,
        _ => VerdictBand::ReliableTrue,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate entry for ({band}, {share}, {locale})")]
    Duplicate {
        line: usize,
        band: VerdictBand,
        share: bool,
        locale: String,
    },
    #[error("default locale {0:?} is missing entry ({1}, share={2})")]
    IncompleteDefault(String, VerdictBand, bool),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub text: String,
    /// Whether the message recommends sharing. Always equal to the share key.
    pub positive: bool,
}

/// Instruction messages keyed by (band, share, locale).
///
/// File format: one tab-separated row per entry,
/// `band  share|no_share  locale  positive|negative  message`; `#` starts a
/// comment line.
#[derive(Clone, Debug)]
pub struct MessageCatalog {
    entries: HashMap<(VerdictBand, bool, String), CatalogEntry>,
    default_locale: String,
}

impl MessageCatalog {
    pub fn parse(input: &str) -> Result<Self, CatalogError> {
        let mut entries = HashMap::new();
        for (idx, raw) in input.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| CatalogError::Malformed {
                line,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = raw.splitn(5, '\t').collect();
            let [band, share, locale, stance, text] = cols[..] else {
                return Err(malformed("expected 5 tab-separated columns"));
            };
            let band = band.parse::<VerdictBand>().map_err(|e| malformed(&e))?;
            let share = match share {
                "share" => true,
                "no_share" => false,
                _ => return Err(malformed("share column must be share or no_share")),
            };
            let positive = match stance {
                "positive" => true,
                "negative" => false,
                _ => return Err(malformed("stance column must be positive or negative")),
            };
            if positive != share {
                return Err(malformed("stance contradicts the share key"));
            }
            let locale = crate::language::normalize_tag(locale)
                .ok_or_else(|| malformed("invalid locale"))?;
            let key = (band, share, locale.clone());
            if entries.contains_key(&key) {
                return Err(CatalogError::Duplicate {
                    line,
                    band,
                    share,
                    locale,
                });
            }
            entries.insert(
                key,
                CatalogEntry {
                    text: text.trim().to_string(),
                    positive,
                },
            );
        }
        let catalog = Self {
            entries,
            default_locale: DEFAULT_LANGUAGE.to_string(),
        };
        for band in VerdictBand::ALL {
            for share in [true, false] {
                if !catalog
                    .entries
                    .contains_key(&(band, share, catalog.default_locale.clone()))
                {
                    return Err(CatalogError::IncompleteDefault(
                        catalog.default_locale.clone(),
                        band,
                        share,
                    ));
                }
            }
        }
        Ok(catalog)
    }

    /// The catalog shipped with the crate (English and French).
    pub fn builtin() -> &'static MessageCatalog {
        static CATALOG: OnceLock<MessageCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| MessageCatalog::parse(BUILTIN_CATALOG).expect("builtin catalog"))
    }

    pub fn locales(&self) -> Vec<&str> {
        let mut locales: Vec<&str> = self.entries.keys().map(|(_, _, l)| l.as_str()).collect();
        locales.sort_unstable();
        locales.dedup();
        locales
    }

    /// Resolves `locale` exactly, then by primary subtag, then falls back to
    /// the default locale.
    pub fn entry(&self, band: VerdictBand, share: bool, locale: &str) -> &CatalogEntry {
        let exact = crate::language::normalize_tag(locale);
        let candidates = exact
            .iter()
            .map(String::as_str)
            .chain(exact.as_deref().map(primary_subtag))
            .chain(std::iter::once(self.default_locale.as_str()));
        for candidate in candidates {
            if let Some(entry) = self.entries.get(&(band, share, candidate.to_string())) {
                return entry;
            }
        }
        unreachable!("default locale completeness is checked at parse time")
    }

    pub fn instruction_message(&self, band: VerdictBand, share: bool, locale: &str) -> &str {
        &self.entry(band, share, locale).text
    }

    pub fn entries(&self) -> impl Iterator<Item = ((VerdictBand, bool, &str), &CatalogEntry)> {
        self.entries
            .iter()
            .map(|((band, share, locale), entry)| ((*band, *share, locale.as_str()), entry))
    }
}

/// Instruction text from the builtin catalog.
pub fn instruction_message(band: VerdictBand, share: bool, locale: &str) -> &'static str {
    MessageCatalog::builtin().instruction_message(band, share, locale)
}

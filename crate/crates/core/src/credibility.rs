//! Per-domain source credibility ratings.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::model::{HasDomain, SourceSummary};

#[derive(Debug, Error)]
pub enum CredibilityError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate domain {0:?}")]
    DuplicateDomain(String),
    #[error("reading credibility table: {0}")]
    Io(#[from] std::io::Error),
}

impl CredibilityError {
    pub fn line(&self) -> Option<u64> {
        match self {
            CredibilityError::MalformedRow { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Scale of the numbers in a ratings file. Percent ratings are divided by 100.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum RatingScale {
    #[default]
    Unit,
    Percent,
}

impl RatingScale {
    fn max(&self) -> f64 {
        match self {
            RatingScale::Unit => 1.0,
            RatingScale::Percent => 100.0,
        }
    }
}

/// Lowercases, trims, and strips exactly one leading `www.` label.
pub fn normalize_domain(domain: &str) -> String {
    let lowered = domain.trim().trim_end_matches('.').to_lowercase();
    match lowered.strip_prefix("www.") {
        Some(rest) => rest.to_string(),
        None => lowered,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CredibilityTable {
    entries: HashMap<String, f64>,
    version: String,
}

/// Outcome of validating a ratings file without stopping at the first problem.
#[derive(Debug)]
pub struct TableReport {
    pub table: CredibilityTable,
    pub problems: Vec<CredibilityError>,
}

impl CredibilityTable {
    pub fn new(version: impl Into<String>) -> Self {
        Self {
            entries: HashMap::new(),
            version: version.into(),
        }
    }

    /// Builds a table from in-memory pairs, normalizing the domains.
    /// Ratings outside [0, 1] are rejected.
    pub fn from_entries<I, S>(version: impl Into<String>, entries: I) -> Result<Self, CredibilityError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut table = Self::new(version);
        for (idx, (domain, rating)) in entries.into_iter().enumerate() {
            table.insert(domain.as_ref(), rating, RatingScale::Unit, idx as u64 + 1)?;
        }
        Ok(table)
    }

    /// Loads `domain,score` rows. A leading `domain,score` header row, blank
    /// lines and `#` comments are skipped.
    pub fn load<R: Read>(reader: R) -> Result<Self, CredibilityError> {
        Self::load_with_scale(reader, RatingScale::Unit)
    }

    pub fn load_with_scale<R: Read>(reader: R, scale: RatingScale) -> Result<Self, CredibilityError> {
        let report = Self::validate(reader, scale)?;
        match report.problems.into_iter().next() {
            Some(problem) => Err(problem),
            None => Ok(report.table),
        }
    }

    pub fn load_path(path: &Path, scale: RatingScale) -> Result<Self, CredibilityError> {
        let file = std::fs::File::open(path)?;
        let mut table = Self::load_with_scale(file, scale)?;
        table.version = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(table)
    }

    /// Parses every row and collects all problems. I/O failures are returned
    /// directly.
    pub fn validate<R: Read>(reader: R, scale: RatingScale) -> Result<TableReport, CredibilityError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut table = Self::new("");
        let mut problems = Vec::new();
        let mut first = true;
        for record in csv.records() {
            let record = match record {
                Ok(r) => r,
                Err(err) => {
                    let line = err.position().map_or(0, |p| p.line());
                    if err.is_io_error() {
                        let csv::ErrorKind::Io(io) = err.into_kind() else { unreachable!() };
                        return Err(CredibilityError::Io(io));
                    }
                    problems.push(CredibilityError::MalformedRow {
                        line,
                        reason: err.to_string(),
                    });
                    continue;
                }
            };
            let line = record.position().map_or(0, |p| p.line());
            let is_header = first
                && record.len() == 2
                && record[0].eq_ignore_ascii_case("domain")
                && record[1].eq_ignore_ascii_case("score");
            first = false;
            if is_header || record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() != 2 {
                problems.push(CredibilityError::MalformedRow {
                    line,
                    reason: format!("expected 2 fields, found {}", record.len()),
                });
                continue;
            }
            let rating = match record[1].parse::<f64>() {
                Ok(r) => r,
                Err(_) => {
                    problems.push(CredibilityError::MalformedRow {
                        line,
                        reason: format!("score {:?} is not a number", &record[1]),
                    });
                    continue;
                }
            };
            if let Err(problem) = table.insert(&record[0], rating, scale, line) {
                problems.push(problem);
            }
        }
        Ok(TableReport { table, problems })
    }

    fn insert(&mut self, domain: &str, rating: f64, scale: RatingScale, line: u64) -> Result<(), CredibilityError> {
        if !rating.is_finite() || rating < 0.0 || rating > scale.max() {
            return Err(CredibilityError::MalformedRow {
                line,
                reason: format!("score {rating} is outside 0..={}", scale.max()),
            });
        }
        let domain = normalize_domain(domain);
        if domain.is_empty() {
            return Err(CredibilityError::MalformedRow {
                line,
                reason: "empty domain".into(),
            });
        }
        if self.entries.contains_key(&domain) {
            return Err(CredibilityError::DuplicateDomain(domain));
        }
        self.entries.insert(domain, rating / scale.max());
        Ok(())
    }

    pub fn lookup(&self, domain: &str) -> Option<f64> {
        self.entries.get(&normalize_domain(domain)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }
}

/// Count of sources, count of rated sources, and the mean rating over the
/// rated subset. Unrated domains do not contribute to the mean.
pub fn summarize_sources<S: HasDomain>(sources: &[S], table: &CredibilityTable) -> SourceSummary {
    SourceSummary::from_ratings(sources.iter().map(|s| table.lookup(s.domain())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceCandidate;

    fn candidate(domain: &str) -> SourceCandidate {
        SourceCandidate {
            url: format!("https://{domain}/"),
            domain: domain.to_string(),
            title: String::new(),
            snippet: String::new(),
            credibility: None,
            query: "q".into(),
        }
    }

    #[test]
    fn loads_single_row() {
        let table = CredibilityTable::load("reuters.com,0.95\n".as_bytes()).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.lookup("reuters.com"), Some(0.95));
    }

    #[test]
    fn empty_input_is_empty_table() {
        assert!(CredibilityTable::load("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_score_is_malformed() {
        let err = CredibilityTable::load("x.com,1.7\n".as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(1));
        let err = CredibilityTable::load("a.com,0.5\nb.com,-0.1\n".as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
        let err = CredibilityTable::load("a.com,high\n".as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(1));
        let err = CredibilityTable::load("a.com,NaN\n".as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn duplicates_after_normalization() {
        let err = CredibilityTable::load("www.Reuters.com,0.9\nreuters.com,0.8\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CredibilityError::DuplicateDomain(d) if d == "reuters.com"));
    }

    #[test]
    fn header_comments_and_blank_lines() {
        let input = "domain,score\n# curated list\n\nbbc.co.uk, 0.9\n";
        let table = CredibilityTable::load(input.as_bytes()).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.lookup("BBC.co.uk"), Some(0.9));
    }

    #[test]
    fn percent_scale_is_divided() {
        let table =
            CredibilityTable::load_with_scale("a.org,85\n".as_bytes(), RatingScale::Percent).unwrap();
        assert_eq!(table.lookup("a.org"), Some(0.85));
        assert!(CredibilityTable::load_with_scale("a.org,101\n".as_bytes(), RatingScale::Percent).is_err());
    }

    #[test]
    fn validate_collects_every_problem() {
        let report =
            CredibilityTable::validate("a.com,2\nb.com,0.3\nc.com,x\n".as_bytes(), RatingScale::Unit).unwrap();
        let lines: Vec<_> = report.problems.iter().filter_map(CredibilityError::line).collect();
        assert_eq!(lines, vec![1, 3]);
        assert_eq!(report.table.len(), 1);
    }

    #[test]
    fn lookup_normalizes() {
        let table = CredibilityTable::from_entries("t", [("reuters.com", 0.95)]).unwrap();
        assert_eq!(table.lookup("Reuters.com"), Some(0.95));
        assert_eq!(table.lookup("www.reuters.com"), Some(0.95));
        assert_eq!(table.lookup("unknown.example"), None);
        assert_eq!(CredibilityTable::default().lookup("reuters.com"), None);
    }

    #[test]
    fn only_one_www_label_is_stripped() {
        assert_eq!(normalize_domain("www.www.example.com"), "www.example.com");
        assert_eq!(normalize_domain("WWW.Example.COM."), "example.com");
    }

    #[test]
    fn summary_examples() {
        let table = CredibilityTable::from_entries("t", [("a.com", 0.8), ("b.com", 0.6), ("c.com", 0.9)]).unwrap();
        // 0.8 + 0.6 = 1.4, halved.
        let both = summarize_sources(&[candidate("a.com"), candidate("b.com")], &table);
        assert_eq!((both.source_count, both.rated_count), (2, 2));
        assert!((both.mean_credibility.unwrap() - 0.7).abs() < 1e-12);

        let partial = summarize_sources(&[candidate("c.com"), candidate("unrated.net")], &table);
        assert_eq!((partial.source_count, partial.rated_count), (2, 1));
        assert_eq!(partial.mean_credibility, Some(0.9));

        let empty = summarize_sources::<SourceCandidate>(&[], &table);
        assert_eq!((empty.source_count, empty.rated_count, empty.mean_credibility), (0, 0, None));
    }
}

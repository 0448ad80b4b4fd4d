//! Expert dashboard aggregates: claim clustering and summary statistics.
//!
//! Claims are turned into tf-idf vectors (`tf = count / len`,
//! `idf = ln(N / df)`, rows L2-normalised) and grouped with k-means seeded by
//! k-means++ from a ChaCha stream, so a fixed `(inputs, k, seed)` always
//! yields the same clusters. Claims with no tokens left after stopword
//! removal are reported in a separate unclusterable bucket.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::language::primary_subtag;
use crate::model::{AnalysisStatus, Claim, ClaimId};
use crate::persistence::{Repository, StorageError, latest_feedback_per_pair};

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_SEED: u64 = 42;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_TOP_TERMS: usize = 5;
pub const CACHE_TTL: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("cannot vectorize an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Storage(#[from] StorageError),
}

const STOPWORDS_EN: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "may", "more", "most", "no", "not", "of", "on", "or", "our", "over", "she", "so",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "up", "was",
    "we", "were", "what", "when", "which", "who", "will", "with", "would", "you", "your",
];

const STOPWORDS_FR: &[&str] = &[
    "a", "au", "aux", "avec", "ce", "ces", "cette", "dans", "de", "des", "du", "elle", "en", "est", "et", "il",
    "ils", "la", "le", "les", "leur", "mais", "ne", "nous", "on", "ont", "ou", "par", "pas", "plus", "pour", "qu",
    "que", "qui", "sa", "se", "ses", "son", "sont", "sur", "un", "une", "vous", "à", "été",
];

const STOPWORDS_ES: &[&str] = &[
    "a", "al", "con", "de", "del", "el", "en", "es", "la", "las", "lo", "los", "no", "para", "por", "que", "se",
    "su", "sus", "un", "una", "y",
];

const STOPWORDS_DE: &[&str] = &[
    "auf", "das", "dem", "den", "der", "des", "die", "ein", "eine", "einen", "es", "für", "hat", "ist", "mit",
    "nicht", "sich", "sie", "und", "von", "zu",
];

fn stopwords(language: &str) -> &'static [&'static str] {
    match primary_subtag(language) {
        "en" => STOPWORDS_EN,
        "fr" => STOPWORDS_FR,
        "es" => STOPWORDS_ES,
        "de" => STOPWORDS_DE,
        _ => &[],
    }
}

/// Lowercase unicode-word tokens. Stopwords are only removed when the
/// language is known.
pub fn tokenize(text: &str, language: Option<&str>) -> Vec<String> {
    let stop = language.map(stopwords).unwrap_or(&[]);
    text.to_lowercase()
        .unicode_words()
        .filter(|w| !stop.contains(w))
        .map(str::to_string)
        .collect()
}

/// Dense tf-idf matrix; `vocabulary` is sorted and indexes the columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TermMatrix {
    pub vocabulary: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Raw token count per row; zero marks an unclusterable document.
    pub token_counts: Vec<usize>,
}

impl TermMatrix {
    pub fn weight(&self, row: usize, term: &str) -> Option<f64> {
        let col = self.vocabulary.binary_search_by(|t| t.as_str().cmp(term)).ok()?;
        Some(self.rows[row][col])
    }
}

pub fn vectorize_claims<S: AsRef<str>>(texts: &[S]) -> Result<TermMatrix, AnalyticsError> {
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref(), None)).collect();
    vectorize_tokens(tokens)
}

/// Like [`vectorize_claims`], removing stopwords per document language.
pub fn vectorize_documents(docs: &[(&str, &str)]) -> Result<TermMatrix, AnalyticsError> {
    let tokens: Vec<Vec<String>> = docs.iter().map(|(text, lang)| tokenize(text, Some(lang))).collect();
    vectorize_tokens(tokens)
}

fn vectorize_tokens(docs: Vec<Vec<String>>) -> Result<TermMatrix, AnalyticsError> {
    if docs.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_default() += 1;
        }
    }
    let vocabulary: Vec<String> = df.keys().map(|t| t.to_string()).collect();
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.values().map(|&d| (n / d as f64).ln()).collect();

    let mut rows = Vec::with_capacity(docs.len());
    for doc in &docs {
        let mut row = vec![0.0; vocabulary.len()];
        if !doc.is_empty() {
            let len = doc.len() as f64;
            for term in doc {
                row[index[term.as_str()]] += 1.0;
            }
            for (col, w) in row.iter_mut().enumerate() {
                *w = *w / len * idf[col];
            }
            let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|w| *w /= norm);
            }
        }
        rows.push(row);
    }
    Ok(TermMatrix {
        vocabulary,
        token_counts: docs.iter().map(Vec::len).collect(),
        rows,
    })
}

/// A cluster over row indices of a [`TermMatrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct RowCluster {
    pub members: Vec<usize>,
    pub top_terms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansRun {
    pub clusters: Vec<RowCluster>,
    /// Rows that had no tokens and were left out.
    pub unclusterable: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
    pub effective_k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen: Vec<usize> = vec![rng.random_range(0..points.len())];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < *d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Assigns each point to its nearest centroid. Ties keep the current
/// assignment when it is among the nearest, otherwise take the lowest index.
fn assign(points: &[&[f64]], centroids: &[Vec<f64>], current: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut sse = 0.0;
    for (i, p) in points.iter().enumerate() {
        let dists: Vec<f64> = centroids.iter().map(|c| sq_dist(p, c)).collect();
        let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let keep = current[i] < centroids.len() && dists[current[i]] == best;
        if !keep {
            let pick = dists.iter().position(|&d| d == best).expect("non-empty centroids");
            changed |= current[i] != pick;
            current[i] = pick;
        }
        sse += best;
    }
    (changed, sse)
}

/// Seeded k-means over the clusterable rows. `k` is capped at their count;
/// clusters that end up empty are dropped. Clusters are ordered by size,
/// then by first member.
pub fn cluster_rows(matrix: &TermMatrix, k: usize, seed: u64) -> Result<KMeansRun, AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::InvalidK);
    }
    let (usable, unclusterable): (Vec<usize>, Vec<usize>) =
        (0..matrix.rows.len()).partition(|&i| matrix.token_counts[i] > 0);
    if usable.is_empty() {
        return Ok(KMeansRun {
            clusters: Vec::new(),
            unclusterable,
            sse_trace: Vec::new(),
            iterations: 0,
            effective_k: 0,
        });
    }
    let points: Vec<&[f64]> = usable.iter().map(|&i| matrix.rows[i].as_slice()).collect();
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut sse_trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (changed, sse) = assign(&points, &centroids, &mut assignment);
        sse_trace.push(sse);
        iterations += 1;
        if !changed || iterations >= MAX_ITERATIONS {
            break;
        }
        update_centroids(&points, &assignment, &mut centroids);
    }

    let mut clusters: Vec<(Vec<usize>, usize)> = (0..k)
        .map(|c| {
            let members: Vec<usize> =
                (0..points.len()).filter(|&i| assignment[i] == c).map(|i| usable[i]).collect();
            (members, c)
        })
        .filter(|(m, _)| !m.is_empty())
        .collect();
    clusters.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0[0].cmp(&b.0[0])));
    let clusters = clusters
        .into_iter()
        .map(|(members, c)| RowCluster {
            top_terms: top_terms(&matrix.vocabulary, &centroids[c]),
            members,
        })
        .collect();
    Ok(KMeansRun {
        clusters,
        unclusterable,
        sse_trace,
        iterations,
        effective_k: k,
    })
}

/// Empty clusters keep their previous centroid.
fn update_centroids(points: &[&[f64]], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dims = points[0].len();
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let mut sum = vec![0.0; dims];
        let mut count = 0usize;
        for (p, _) in points.iter().zip(assignment).filter(|(_, a)| **a == c) {
            for (s, x) in sum.iter_mut().zip(p.iter()) {
                *s += x;
            }
            count += 1;
        }
        if count > 0 {
            sum.iter_mut().for_each(|s| *s /= count as f64);
            *centroid = sum;
        }
    }
}

fn top_terms(vocabulary: &[String], centroid: &[f64]) -> Vec<String> {
    let mut weighted: Vec<(usize, f64)> =
        centroid.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    weighted.into_iter().take(MAX_TOP_TERMS).map(|(i, _)| vocabulary[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimCluster {
    pub cluster_id: usize,
    pub member_claim_ids: Vec<ClaimId>,
    pub top_terms: Vec<String>,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub clusters: Vec<ClaimCluster>,
    pub unclusterable: Vec<ClaimId>,
}

/// Clusters claims, removing stopwords by each claim's language.
pub fn cluster_claims(claims: &[Claim], k: usize, seed: u64) -> Result<ClusterReport, AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::InvalidK);
    }
    if claims.is_empty() {
        return Ok(ClusterReport {
            k,
            seed,
            clusters: Vec::new(),
            unclusterable: Vec::new(),
        });
    }
    let docs: Vec<(&str, &str)> = claims.iter().map(|c| (c.text.as_str(), c.language.as_str())).collect();
    let matrix = vectorize_documents(&docs)?;
    let run = cluster_rows(&matrix, k, seed)?;
    let clusters = run
        .clusters
        .into_iter()
        .enumerate()
        .map(|(cluster_id, c)| ClaimCluster {
            cluster_id,
            size: c.members.len(),
            member_claim_ids: c.members.iter().map(|&i| claims[i].id).collect(),
            top_terms: c.top_terms,
        })
        .collect();
    Ok(ClusterReport {
        k,
        seed,
        clusters,
        unclusterable: run.unclusterable.iter().map(|&i| claims[i].id).collect(),
    })
}

/// Half-open time range `[from, to)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeWindow {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

impl TimeWindow {
    pub fn all_until(to: DateTime<Utc>) -> Self {
        Self {
            from: DateTime::<Utc>::UNIX_EPOCH,
            to,
        }
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.from <= at && at < self.to
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DashboardStats {
    pub total_claims: u64,
    pub completed_analyses: u64,
    pub failed_analyses: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
    /// Keys 1..=5, always present.
    pub feedback_histogram: BTreeMap<u8, u64>,
    pub feedback_count: u64,
}

pub fn claims_in_window(repo: &dyn Repository, window: TimeWindow) -> Result<Vec<Claim>, AnalyticsError> {
    Ok(repo
        .list_claims_since(window.from, usize::MAX)?
        .into_iter()
        .filter(|(c, _)| window.contains(c.submitted_at))
        .map(|(c, _)| c)
        .collect())
}

pub fn compute_stats(repo: &dyn Repository, window: TimeWindow) -> Result<DashboardStats, AnalyticsError> {
    let rows: Vec<_> = repo
        .list_claims_since(window.from, usize::MAX)?
        .into_iter()
        .filter(|(c, _)| window.contains(c.submitted_at))
        .collect();
    let mut completed = 0u64;
    let mut failed = 0u64;
    let mut score_sum = 0u64;
    for (_, analysis) in &rows {
        match analysis.status {
            AnalysisStatus::Complete => {
                completed += 1;
                if let Some(result) = &analysis.result {
                    score_sum += u64::from(result.score.value());
                }
            }
            AnalysisStatus::Failed => failed += 1,
            _ => {}
        }
    }
    let feedback: Vec<_> = repo
        .list_feedback_since(window.from)?
        .into_iter()
        .filter(|f| window.contains(f.created_at))
        .collect();
    let feedback = latest_feedback_per_pair(feedback);
    let mut histogram: BTreeMap<u8, u64> = (1..=5).map(|r| (r, 0)).collect();
    for f in &feedback {
        *histogram.entry(f.rating).or_default() += 1;
    }
    Ok(DashboardStats {
        total_claims: rows.len() as u64,
        completed_analyses: completed,
        failed_analyses: failed,
        mean_score: (completed > 0).then(|| score_sum as f64 / completed as f64),
        feedback_histogram: histogram,
        feedback_count: feedback.len() as u64,
    })
}

/// Time-to-live cache; at most one caller recomputes a stale entry while
/// others keep reading.
pub struct TtlCache<K, V> {
    ttl: Duration,
    entries: RwLock<HashMap<K, (Instant, V)>>,
    refresh: Mutex<()>,
}

impl<K: Eq + Hash + Clone, V: Clone> TtlCache<K, V> {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: RwLock::new(HashMap::new()),
            refresh: Mutex::new(()),
        }
    }

    fn fresh(&self, key: &K, now: Instant) -> Option<V> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries
            .get(key)
            .filter(|(at, _)| now.saturating_duration_since(*at) < self.ttl)
            .map(|(_, v)| v.clone())
    }

    pub fn get_or_try_refresh<E>(&self, key: K, now: Instant, compute: impl FnOnce() -> Result<V, E>) -> Result<V, E> {
        if let Some(v) = self.fresh(&key, now) {
            return Ok(v);
        }
        let _writer = self.refresh.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(v) = self.fresh(&key, now) {
            return Ok(v);
        }
        let value = compute()?;
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, (now, value.clone()));
        Ok(value)
    }

    pub fn invalidate(&self) {
        self.entries.write().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

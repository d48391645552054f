//! Semantic distance between prompts and ideas.
//!
//! Documents become vectors either by summing word vectors from an
//! [`EmbeddingStore`] or by lookup in precomputed [`SidecarVectors`]. Distance
//! is one minus cosine similarity; sentence-level variants aggregate the
//! distances of every cross-document sentence pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{SubmissionId, TaskId};
use crate::orchestrator::IdeaSubmission;
use crate::workspace::tokens;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistanceError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("vector file is empty")]
    EmptyFile,
    #[error("no token of the text is in the vocabulary")]
    NoKnownTokens,
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("vectors have different dimensions ({left} vs {right})")]
    VectorDimensionMismatch { left: usize, right: usize },
    #[error("document has no vectorizable sentence")]
    NoVectorizableSentence,
    #[error("no precomputed vector for text id {0:?}")]
    MissingSidecar(String),
    #[error("metric {0} is not available")]
    MetricUnavailable(Metric),
}

fn io_error(path: &Path, e: std::io::Error) -> DistanceError {
    DistanceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// vector sources

/// Word-vector table loaded from a `token v1 v2 ... vD` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
    case_folding: bool,
}

impl EmbeddingStore {
    pub fn from_entries<I, S>(entries: I, case_folding: bool) -> Result<Self, DistanceError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = HashMap::new();
        let mut dimension = None;
        for (line, (token, values)) in entries.into_iter().enumerate() {
            let expected = *dimension.get_or_insert(values.len());
            if values.len() != expected {
                return Err(DistanceError::DimensionMismatch {
                    line: line + 1,
                    expected,
                    found: values.len(),
                });
            }
            let mut token = token.into();
            if case_folding {
                token = token.to_lowercase();
            }
            table.entry(token).or_insert(values);
        }
        match dimension {
            None | Some(0) => Err(DistanceError::EmptyFile),
            Some(dimension) => Ok(EmbeddingStore {
                dimension,
                table,
                case_folding,
            }),
        }
    }

    pub fn parse<R: BufRead>(reader: R, case_folding: bool) -> Result<Self, DistanceError> {
        let mut entries = Vec::new();
        let mut dimension = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| DistanceError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().unwrap_or_default().to_string();
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| DistanceError::ParseError {
                        line: line_no,
                        message: format!("{f:?} is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if values.is_empty() {
                return Err(DistanceError::ParseError {
                    line: line_no,
                    message: "token has no vector".into(),
                });
            }
            let expected = *dimension.get_or_insert(values.len());
            if values.len() != expected {
                return Err(DistanceError::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: values.len(),
                });
            }
            entries.push((token, values));
        }
        Self::from_entries(entries, case_folding)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn case_folding(&self) -> bool {
        self.case_folding
    }

    /// Looks up a raw text token. Falls back to the token with surrounding
    /// punctuation stripped, so `"river."` finds `"river"`.
    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        let folded;
        let token = if self.case_folding {
            folded = token.to_lowercase();
            folded.as_str()
        } else {
            token
        };
        self.table
            .get(token)
            .or_else(|| {
                let bare = token.trim_matches(|c: char| c.is_ascii_punctuation());
                (!bare.is_empty() && bare != token).then(|| self.table.get(bare)).flatten()
            })
            .map(Vec::as_slice)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, case_folding: bool) -> Result<EmbeddingStore, DistanceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    EmbeddingStore::parse(BufReader::new(file), case_folding)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VectorSource {
    WordSum,
    Sidecar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocVector {
    pub values: Vec<f64>,
    pub source: VectorSource,
    pub token_hits: usize,
}

/// Sum of the vectors of every in-vocabulary token. Unknown tokens are skipped.
pub fn embed_sum(text: &str, store: &EmbeddingStore) -> Result<DocVector, DistanceError> {
    let mut values = vec![0.0; store.dimension];
    let mut hits = 0;
    for token in tokens(text) {
        if let Some(v) = store.lookup(token) {
            for (acc, x) in values.iter_mut().zip(v) {
                *acc += x;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(DistanceError::NoKnownTokens);
    }
    Ok(DocVector {
        values,
        source: VectorSource::WordSum,
        token_hits: hits,
    })
}

/// Precomputed document vectors keyed by text id, read from
/// `id<TAB>v1,v2,...,vD` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct SidecarVectors {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl SidecarVectors {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, DistanceError> {
        let mut vectors = HashMap::new();
        let mut dimension = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| DistanceError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let (id, rest) = line.split_once('\t').ok_or_else(|| DistanceError::ParseError {
                line: line_no,
                message: "expected id<TAB>values".into(),
            })?;
            let values = rest
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| DistanceError::ParseError {
                        line: line_no,
                        message: format!("{f:?} is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let expected = *dimension.get_or_insert(values.len());
            if values.len() != expected {
                return Err(DistanceError::DimensionMismatch {
                    line: line_no,
                    expected,
                    found: values.len(),
                });
            }
            vectors.insert(id.to_string(), values);
        }
        let dimension = dimension.ok_or(DistanceError::EmptyFile)?;
        Ok(SidecarVectors { dimension, vectors })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<DocVector, DistanceError> {
        self.vectors
            .get(id)
            .map(|v| DocVector {
                values: v.clone(),
                source: VectorSource::Sidecar,
                token_hits: 0,
            })
            .ok_or_else(|| DistanceError::MissingSidecar(id.to_string()))
    }
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<SidecarVectors, DistanceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    SidecarVectors::parse(BufReader::new(file))
}

// ---------------------------------------------------------------------------
// distances

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, DistanceError> {
    if u.len() != v.len() {
        return Err(DistanceError::VectorDimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(DistanceError::ZeroVector);
    }
    let similarity = (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0);
    Ok(1.0 - similarity)
}

/// Splits after `.`, `!` or `?` when followed by whitespace or end of text.
/// Abbreviations such as "Mr." therefore end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Turns one sentence into a vector.
pub trait SentenceVectorizer {
    fn vectorize(&self, sentence: &str) -> Result<Vec<f64>, DistanceError>;
}

impl SentenceVectorizer for EmbeddingStore {
    fn vectorize(&self, sentence: &str) -> Result<Vec<f64>, DistanceError> {
        embed_sum(sentence, self).map(|d| d.values)
    }
}

impl<T: SentenceVectorizer + ?Sized> SentenceVectorizer for &T {
    fn vectorize(&self, sentence: &str) -> Result<Vec<f64>, DistanceError> {
        (**self).vectorize(sentence)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aggregation {
    Mean,
    Min,
    Median,
}

/// Aggregates non-empty pair distances.
pub fn aggregate(distances: &[f64], agg: Aggregation) -> f64 {
    match agg {
        Aggregation::Mean => distances.iter().sum::<f64>() / distances.len() as f64,
        Aggregation::Min => distances.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Median => {
            let mut sorted = distances.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            }
        }
    }
}

fn sentence_vectors<V: SentenceVectorizer + ?Sized>(doc: &str, vectorizer: &V) -> Vec<Vec<f64>> {
    split_sentences(doc)
        .iter()
        .filter_map(|s| vectorizer.vectorize(s).ok())
        .filter(|v| v.iter().any(|x| *x != 0.0))
        .collect()
}

/// Cosine distances of every (sentence of A, sentence of B) pair, row-major.
pub fn sentence_pair_distances<V: SentenceVectorizer + ?Sized>(
    doc_a: &str,
    doc_b: &str,
    vectorizer: &V,
) -> Result<Vec<f64>, DistanceError> {
    let va = sentence_vectors(doc_a, vectorizer);
    let vb = sentence_vectors(doc_b, vectorizer);
    if va.is_empty() || vb.is_empty() {
        return Err(DistanceError::NoVectorizableSentence);
    }
    let mut out = Vec::with_capacity(va.len() * vb.len());
    for a in &va {
        for b in &vb {
            out.push(cosine_distance(a, b)?);
        }
    }
    Ok(out)
}

pub fn sentence_pair_distance<V: SentenceVectorizer + ?Sized>(
    doc_a: &str,
    doc_b: &str,
    vectorizer: &V,
    agg: Aggregation,
) -> Result<f64, DistanceError> {
    sentence_pair_distances(doc_a, doc_b, vectorizer).map(|d| aggregate(&d, agg))
}

// ---------------------------------------------------------------------------
// metrics and ranking

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Whole-document word-vector sum.
    WordSum,
    SentenceMean,
    SentenceMin,
    SentenceMedian,
    /// Precomputed document vectors.
    Sidecar,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::WordSum,
        Metric::SentenceMean,
        Metric::SentenceMin,
        Metric::SentenceMedian,
        Metric::Sidecar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::WordSum => "word_sum",
            Metric::SentenceMean => "sentence_mean",
            Metric::SentenceMin => "sentence_min",
            Metric::SentenceMedian => "sentence_median",
            Metric::Sidecar => "sidecar",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self != Metric::Sidecar
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// A text together with its id for sidecar lookup.
#[derive(Clone, Copy, Debug)]
pub struct TextRef<'a> {
    pub id: &'a str,
    pub body: &'a str,
}

pub fn prompt_text_id(task: TaskId) -> String {
    format!("task:{task}")
}

pub fn idea_text_id(submission: SubmissionId) -> String {
    format!("idea:{submission}")
}

pub trait DistanceMetric {
    fn distance(&self, a: TextRef<'_>, b: TextRef<'_>) -> Result<f64, DistanceError>;
}

impl<F> DistanceMetric for F
where
    F: Fn(TextRef<'_>, TextRef<'_>) -> Result<f64, DistanceError>,
{
    fn distance(&self, a: TextRef<'_>, b: TextRef<'_>) -> Result<f64, DistanceError> {
        self(a, b)
    }
}

/// Shared, immutable scoring resources.
#[derive(Clone, Debug, Default)]
pub struct DistanceScorer {
    store: Option<Arc<EmbeddingStore>>,
    sidecar: Option<Arc<SidecarVectors>>,
    metrics: Vec<Metric>,
}

impl DistanceScorer {
    /// Enables every metric whose resource is present.
    pub fn new(store: Option<Arc<EmbeddingStore>>, sidecar: Option<Arc<SidecarVectors>>) -> Self {
        let metrics = Metric::ALL
            .into_iter()
            .filter(|m| if m.needs_embeddings() { store.is_some() } else { sidecar.is_some() })
            .collect();
        DistanceScorer { store, sidecar, metrics }
    }

    pub fn with_metrics(mut self, metrics: Vec<Metric>) -> Result<Self, DistanceError> {
        for &m in &metrics {
            let available = if m.needs_embeddings() { self.store.is_some() } else { self.sidecar.is_some() };
            if !available {
                return Err(DistanceError::MetricUnavailable(m));
            }
        }
        self.metrics = metrics;
        Ok(self)
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn distance(&self, metric: Metric, a: TextRef<'_>, b: TextRef<'_>) -> Result<f64, DistanceError> {
        let store = || self.store.as_deref().ok_or(DistanceError::MetricUnavailable(metric));
        match metric {
            Metric::WordSum => {
                let store = store()?;
                cosine_distance(&embed_sum(a.body, store)?.values, &embed_sum(b.body, store)?.values)
            }
            Metric::SentenceMean => sentence_pair_distance(a.body, b.body, store()?, Aggregation::Mean),
            Metric::SentenceMin => sentence_pair_distance(a.body, b.body, store()?, Aggregation::Min),
            Metric::SentenceMedian => sentence_pair_distance(a.body, b.body, store()?, Aggregation::Median),
            Metric::Sidecar => {
                let sidecar = self.sidecar.as_deref().ok_or(DistanceError::MetricUnavailable(metric))?;
                cosine_distance(&sidecar.get(a.id)?.values, &sidecar.get(b.id)?.values)
            }
        }
    }

    /// Scores under every enabled metric; metrics that fail are left out.
    pub fn score_all(&self, prompt: TextRef<'_>, idea: TextRef<'_>) -> BTreeMap<String, f64> {
        self.metrics
            .iter()
            .filter_map(|&m| self.distance(m, prompt, idea).ok().map(|d| (m.name().to_string(), d)))
            .collect()
    }

    pub fn metric(&self, metric: Metric) -> ScorerMetric<'_> {
        ScorerMetric { scorer: self, metric }
    }
}

pub struct ScorerMetric<'a> {
    scorer: &'a DistanceScorer,
    metric: Metric,
}

impl DistanceMetric for ScorerMetric<'_> {
    fn distance(&self, a: TextRef<'_>, b: TextRef<'_>) -> Result<f64, DistanceError> {
        self.scorer.distance(self.metric, a, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedIdea {
    pub submission_id: SubmissionId,
    /// `None` marks an idea that could not be scored.
    pub distance: Option<f64>,
    pub unscored_reason: Option<String>,
}

/// Orders ideas farthest-first from the prompt. Ties go to the earlier
/// submission; unscorable ideas come last.
pub fn rank_ideas<M: DistanceMetric + ?Sized>(
    metric: &M,
    prompt: TextRef<'_>,
    ideas: &[IdeaSubmission],
) -> Vec<RankedIdea> {
    let mut scored: Vec<(&IdeaSubmission, Result<f64, DistanceError>)> = ideas
        .iter()
        .map(|idea| {
            let id = idea_text_id(idea.id);
            let d = metric.distance(prompt, TextRef { id: &id, body: &idea.body });
            (idea, d)
        })
        .collect();
    scored.sort_by(|(ia, da), (ib, db)| {
        let by_time = (ia.submitted_at, ia.id).cmp(&(ib.submitted_at, ib.id));
        match (da, db) {
            (Ok(a), Ok(b)) => b.total_cmp(a).then(by_time),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => by_time,
        }
    });
    scored
        .into_iter()
        .map(|(idea, d)| match d {
            Ok(distance) => RankedIdea {
                submission_id: idea.id,
                distance: Some(distance),
                unscored_reason: None,
            },
            Err(e) => RankedIdea {
                submission_id: idea.id,
                distance: None,
                unscored_reason: Some(e.to_string()),
            },
        })
        .collect()
}

/// Flags the later idea of every pair closer than `threshold`. The earliest
/// idea of a cluster always survives.
pub fn near_duplicate_flags<M: DistanceMetric + ?Sized>(
    metric: &M,
    ideas: &[IdeaSubmission],
    threshold: f64,
) -> BTreeSet<SubmissionId> {
    let mut ordered: Vec<&IdeaSubmission> = ideas.iter().collect();
    ordered.sort_by_key(|i| (i.submitted_at, i.id));
    let ids: Vec<String> = ordered.iter().map(|i| idea_text_id(i.id)).collect();
    let mut flagged = BTreeSet::new();
    for i in 0..ordered.len() {
        for j in i + 1..ordered.len() {
            let a = TextRef { id: &ids[i], body: &ordered[i].body };
            let b = TextRef { id: &ids[j], body: &ordered[j].body };
            if matches!(metric.distance(a, b), Ok(d) if d < threshold) {
                flagged.insert(ordered[j].id);
            }
        }
    }
    flagged
}

//! Article/engagement data model, JSONL corpus I/O and stratified splitting.
//!
//! A corpus file is UTF-8 JSON Lines, one article per line:
//!
//! ```text
//! {"id": "a1", "domain": "politics", "label": 1,
//!  "content": {"headline": "...", "text": "..."},
//!  "publisher": {"user_name": "...", "sex": "male", "age": 34},
//!  "engagements": [{"user_id": "u1", "post_id": "p1", "timestamp": 120}]}
//! ```
//!
//! `label` and `timestamp` may be `null`. Unknown extra keys are ignored.
//! Text is NFC-normalized at load and engagements are stably sorted by
//! timestamp with untimed (`null`) engagements last.

mod synthetic;

pub use synthetic::{generate_synthetic, GenConfig, MARKER_TOKENS};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Oldest plausible publisher age.
pub const MAX_AGE: u32 = 150;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("{0}")]
    Argument(String),
}

/// Gold label. Serialized as `0` (real) / `1` (fake).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Fake
        } else {
            Label::Real
        }
    }

    pub fn as_f64(self) -> f64 {
        self.index() as f64
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Business,
    Health,
    Politics,
    Sport,
    Religion,
    Technology,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Business,
        Domain::Health,
        Domain::Politics,
        Domain::Sport,
        Domain::Religion,
        Domain::Technology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Business => "business",
            Domain::Health => "health",
            Domain::Politics => "politics",
            Domain::Sport => "sport",
            Domain::Religion => "religion",
            Domain::Technology => "technology",
        }
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            "unknown" => Ok(Sex::Unknown),
            other => Err(format!("unknown sex {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publisher {
    pub user_name: String,
    pub sex: Sex,
    pub age: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Content {
    pub headline: String,
    pub text: String,
}

/// One share of an article: user `user_id` posted `post_id` at `timestamp`
/// seconds after the corpus epoch. `None` means the article has not been
/// engaged with yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engagement {
    pub user_id: String,
    pub post_id: String,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: String,
    pub domain: Domain,
    pub label: Option<Label>,
    pub content: Content,
    pub publisher: Publisher,
    pub engagements: Vec<Engagement>,
}

impl NewsArticle {
    /// Headline and body joined, the unit every text feature is computed over.
    pub fn document(&self) -> String {
        if self.content.headline.is_empty() {
            self.content.text.clone()
        } else {
            format!("{}\n{}", self.content.headline, self.content.text)
        }
    }

    /// Checks every type invariant except id uniqueness.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("article id is empty".into());
        }
        if self.publisher.user_name.is_empty() {
            return Err(format!("article {}: publisher user_name is empty", self.id));
        }
        if let Some(age) = self.publisher.age {
            if age > MAX_AGE {
                return Err(format!("article {}: publisher age {age} out of range", self.id));
            }
        }
        if self.content.text.trim().is_empty() {
            return Err(format!("article {}: text is empty", self.id));
        }
        for e in &self.engagements {
            if e.user_id.is_empty() || e.post_id.is_empty() {
                return Err(format!("article {}: engagement with empty user_id/post_id", self.id));
            }
        }
        if !is_engagement_order(&self.engagements) {
            return Err(format!("article {}: engagements not sorted by timestamp", self.id));
        }
        Ok(())
    }
}

fn engagement_key(e: &Engagement) -> (bool, u64) {
    match e.timestamp {
        Some(t) => (false, t),
        None => (true, 0),
    }
}

fn is_engagement_order(es: &[Engagement]) -> bool {
    es.windows(2)
        .all(|w| engagement_key(&w[0]) <= engagement_key(&w[1]))
}

/// Sorts ascending by timestamp, untimed last; stable for equal keys.
pub fn sort_engagements(es: &mut [Engagement]) {
    es.sort_by_key(engagement_key);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub articles: Vec<NewsArticle>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, articles: Vec<NewsArticle>) -> Self {
        Corpus {
            name: name.into(),
            articles,
        }
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsArticle> {
        self.articles.iter().find(|a| a.id == id)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.articles
            .iter()
            .filter(|a| a.label == Some(label))
            .count()
    }

    /// Validator pass over every article plus id uniqueness. Errors carry the
    /// 1-based position of the offending article.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for (i, a) in self.articles.iter().enumerate() {
            a.validate().map_err(|message| CorpusError::Validation {
                line: i + 1,
                message,
            })?;
            if !seen.insert(a.id.as_str()) {
                return Err(CorpusError::Validation {
                    line: i + 1,
                    message: format!("duplicate article id {:?}", a.id),
                });
            }
        }
        Ok(())
    }
}

// Wire records: strings are validated into enums after parsing so that bad
// domains surface as validation errors rather than JSON errors.
#[derive(Deserialize)]
struct RawArticle {
    id: String,
    domain: String,
    #[serde(default)]
    label: Option<i64>,
    content: Content,
    publisher: RawPublisher,
    #[serde(default)]
    engagements: Vec<RawEngagement>,
}

#[derive(Deserialize)]
struct RawPublisher {
    user_name: String,
    sex: String,
    #[serde(default)]
    age: Option<i64>,
}

#[derive(Deserialize)]
struct RawEngagement {
    user_id: String,
    post_id: String,
    #[serde(default)]
    timestamp: Option<i64>,
}

impl RawArticle {
    fn into_article(self) -> Result<NewsArticle, String> {
        let domain = self.domain.parse::<Domain>()?;
        let label = match self.label {
            None => None,
            Some(0) => Some(Label::Real),
            Some(1) => Some(Label::Fake),
            Some(v) => return Err(format!("label must be 0, 1 or null, got {v}")),
        };
        let sex = self.publisher.sex.parse::<Sex>()?;
        let age = match self.publisher.age {
            None => None,
            Some(a) if (0..=MAX_AGE as i64).contains(&a) => Some(a as u32),
            Some(a) => return Err(format!("publisher age {a} outside [0, {MAX_AGE}]")),
        };
        let mut engagements = self
            .engagements
            .into_iter()
            .map(|e| {
                let timestamp = match e.timestamp {
                    None => None,
                    Some(t) if t >= 0 => Some(t as u64),
                    Some(t) => return Err(format!("negative timestamp {t}")),
                };
                Ok(Engagement {
                    user_id: e.user_id,
                    post_id: e.post_id,
                    timestamp,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        sort_engagements(&mut engagements);
        let article = NewsArticle {
            id: self.id,
            domain,
            label,
            content: Content {
                headline: self.content.headline.nfc().collect(),
                text: self.content.text.nfc().collect(),
            },
            publisher: Publisher {
                user_name: self.publisher.user_name,
                sex,
                age,
            },
            engagements,
        };
        article.validate()?;
        Ok(article)
    }
}

/// Parses one JSONL line into a validated article.
pub fn parse_article(line: &str, line_no: usize) -> Result<NewsArticle, CorpusError> {
    let raw: RawArticle = serde_json::from_str(line).map_err(|source| CorpusError::Parse {
        line: line_no,
        source,
    })?;
    raw.into_article()
        .map_err(|message| CorpusError::Validation {
            line: line_no,
            message,
        })
}

pub fn read_corpus<R: BufRead>(reader: R, name: &str) -> Result<Corpus, CorpusError> {
    let mut articles = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let article = parse_article(&line, line_no)?;
        if !seen.insert(article.id.clone()) {
            return Err(CorpusError::Validation {
                line: line_no,
                message: format!("duplicate article id {:?}", article.id),
            });
        }
        articles.push(article);
    }
    Ok(Corpus {
        name: name.to_string(),
        articles,
    })
}

/// Loads a JSONL corpus. The corpus name is the file stem.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    read_corpus(BufReader::new(file), &name)
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut w: W) -> std::io::Result<()> {
    for a in &corpus.articles {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus_to(corpus, BufWriter::new(file)).map_err(io_err)
}

/// Deterministic stratified split. `|train| = round(train_fraction * N)` and
/// every label with at least two articles lands on both sides. Both halves keep
/// the original article order.
pub fn split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::Argument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, a) in corpus.articles.iter().enumerate() {
        match a.label {
            Some(l) => by_label[l.index()].push(i),
            None => {
                return Err(CorpusError::Argument(format!(
                    "cannot split: article {} is unlabeled",
                    a.id
                )))
            }
        }
    }
    for (l, group) in by_label.iter().enumerate() {
        if group.len() < 2 {
            return Err(CorpusError::Argument(format!(
                "cannot stratify: label {} has {} article(s), need at least 2",
                Label::from_index(l),
                group.len()
            )));
        }
    }
    let n = corpus.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let quotas = stratified_quotas([by_label[0].len(), by_label[1].len()], n_train)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (group, quota) in by_label.iter_mut().zip(quotas) {
        group.shuffle(&mut rng);
        for &i in &group[..quota] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (a, t) in corpus.articles.iter().zip(in_train) {
        if t {
            train.push(a.clone());
        } else {
            test.push(a.clone());
        }
    }
    Ok((
        Corpus::new(format!("{}/train", corpus.name), train),
        Corpus::new(format!("{}/test", corpus.name), test),
    ))
}

/// Per-class train counts summing to `n_train`, each within `[1, size - 1]`,
/// allocated by largest remainder.
fn stratified_quotas(sizes: [usize; 2], n_train: usize) -> Result<[usize; 2], CorpusError> {
    let total: usize = sizes.iter().sum();
    if n_train < 2 || n_train > total - 2 {
        return Err(CorpusError::Argument(format!(
            "split of {total} articles into {n_train} train rows leaves a side without both labels"
        )));
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * n_train as f64 / total as f64)
        .collect();
    let mut q: [usize; 2] = [exact[0].floor() as usize, exact[1].floor() as usize];
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut k = 0;
    while q[0] + q[1] < n_train {
        q[order[k % 2]] += 1;
        k += 1;
    }
    for c in 0..2 {
        let other = 1 - c;
        while q[c] < 1 {
            q[c] += 1;
            q[other] -= 1;
        }
        while q[c] > sizes[c] - 1 {
            q[c] -= 1;
            q[other] += 1;
        }
    }
    Ok(q)
}

//! Hybrid feature extraction.
//!
//! The content block is smoothed TF-IDF over word n-grams and within-token
//! character n-grams,
//!
//! ```text
//! weight(t, d) = tf(t, d) * (ln((1 + N) / (1 + df(t))) + 1)
//! ```
//!
//! L2-normalized per document. The social block ([`social`]) is z-scored with
//! training statistics and appended after the vocabulary indices.

mod social;
mod tokenize;
mod vector;

pub use social::{social_features, SocialStats, SOCIAL_DIM, SOCIAL_FEATURE_NAMES};
pub use tokenize::tokenize;
pub use vector::FeatureVector;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, NewsArticle};

const WORD_PREFIX: &str = "w:";
const CHAR_PREFIX: &str = "c:";

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit features on an empty corpus")]
    EmptyCorpus,
    #[error("empty effective vocabulary (min_df = {min_df}, {n_documents} documents)")]
    EmptyVocabulary { min_df: usize, n_documents: usize },
    #[error("feature mode {0} needs social statistics but the feature space has none")]
    MissingSocialStats(FeatureMode),
    #[error("invalid feature config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub word_ngram_range: (usize, usize),
    pub char_ngram_range: Option<(usize, usize)>,
    pub min_df: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            word_ngram_range: (1, 2),
            char_ngram_range: Some((3, 5)),
            min_df: 2,
        }
    }
}

impl FeatureConfig {
    pub fn unigrams(min_df: usize) -> Self {
        FeatureConfig {
            word_ngram_range: (1, 1),
            char_ngram_range: None,
            min_df,
        }
    }

    fn check(&self) -> Result<(), FeatureError> {
        let (lo, hi) = self.word_ngram_range;
        if lo == 0 || lo > hi {
            return Err(FeatureError::Config(format!("word n-gram range {lo}..={hi}")));
        }
        if let Some((lo, hi)) = self.char_ngram_range {
            if lo == 0 || lo > hi {
                return Err(FeatureError::Config(format!("char n-gram range {lo}..={hi}")));
            }
        }
        Ok(())
    }
}

/// Calls `f` once per term occurrence in a token sequence. Word n-grams are
/// space-joined tokens; character n-grams are taken inside each token padded
/// with one space on each side.
pub fn for_each_term(tokens: &[String], config: &FeatureConfig, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    let (wlo, whi) = config.word_ngram_range;
    for n in wlo..=whi {
        for window in tokens.windows(n) {
            buf.clear();
            buf.push_str(WORD_PREFIX);
            for (k, t) in window.iter().enumerate() {
                if k > 0 {
                    buf.push(' ');
                }
                buf.push_str(t);
            }
            f(&buf);
        }
    }
    if let Some((clo, chi)) = config.char_ngram_range {
        let mut chars: Vec<char> = Vec::new();
        for t in tokens {
            chars.clear();
            chars.push(' ');
            chars.extend(t.chars());
            chars.push(' ');
            for n in clo..=chi {
                for window in chars.windows(n) {
                    buf.clear();
                    buf.push_str(CHAR_PREFIX);
                    buf.extend(window.iter());
                    f(&buf);
                }
            }
        }
    }
}

/// Lexicographically indexed term set with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabularyWire", from = "VocabularyWire")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<usize>,
    index: HashMap<String, usize>,
    n_documents: usize,
    config: FeatureConfig,
}

#[derive(Serialize, Deserialize)]
struct VocabularyWire {
    n_documents: usize,
    config: FeatureConfig,
    entries: Vec<VocabEntry>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    term: String,
    df: usize,
}

impl From<Vocabulary> for VocabularyWire {
    fn from(v: Vocabulary) -> Self {
        VocabularyWire {
            n_documents: v.n_documents,
            config: v.config,
            entries: v
                .terms
                .into_iter()
                .zip(v.df)
                .map(|(term, df)| VocabEntry { term, df })
                .collect(),
        }
    }
}

impl From<VocabularyWire> for Vocabulary {
    fn from(w: VocabularyWire) -> Self {
        let (terms, df): (Vec<String>, Vec<usize>) =
            w.entries.into_iter().map(|e| (e.term, e.df)).unzip();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            terms,
            df,
            index,
            n_documents: w.n_documents,
            config: w.config,
        }
    }
}

impl Vocabulary {
    pub fn fit<'a>(
        docs: impl IntoIterator<Item = &'a [String]>,
        config: &FeatureConfig,
    ) -> Result<Self, FeatureError> {
        config.check()?;
        // BTreeMap gives lexicographic index order for free.
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_documents = 0;
        let mut seen: HashSet<String> = HashSet::new();
        for tokens in docs {
            n_documents += 1;
            seen.clear();
            for_each_term(tokens, config, |t| {
                if !seen.contains(t) {
                    seen.insert(t.to_string());
                }
            });
            for t in seen.drain() {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if n_documents == 0 {
            return Err(FeatureError::EmptyCorpus);
        }
        let (terms, df): (Vec<String>, Vec<usize>) =
            df.into_iter().filter(|(_, c)| *c >= config.min_df).unzip();
        if terms.is_empty() {
            return Err(FeatureError::EmptyVocabulary {
                min_df: config.min_df,
                n_documents,
            });
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            terms,
            df,
            index,
            n_documents,
            config: config.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn index_of_word(&self, word: &str) -> Option<usize> {
        self.index_of(&format!("{WORD_PREFIX}{word}"))
    }

    pub fn df(&self, index: usize) -> usize {
        self.df[index]
    }

    pub fn idf(&self, index: usize) -> f64 {
        idf(self.n_documents, self.df[index])
    }

    /// Single-token word terms in index order.
    pub fn word_unigrams(&self) -> impl Iterator<Item = &str> + '_ {
        self.terms
            .iter()
            .filter_map(|t| t.strip_prefix(WORD_PREFIX))
            .filter(|w| !w.contains(' '))
    }

    /// Raw in-vocabulary term counts sorted by index.
    pub fn counts(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for_each_term(tokens, &self.config, |t| {
            if let Some(&i) = self.index.get(t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        });
        let mut out: Vec<(usize, f64)> = counts.into_iter().collect();
        // fixed order keeps downstream float sums reproducible
        out.sort_unstable_by_key(|p| p.0);
        out
    }
}

pub fn idf(n_documents: usize, df: usize) -> f64 {
    ((1.0 + n_documents as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "content")]
    ContentOnly,
    #[serde(rename = "social")]
    SocialOnly,
    #[serde(rename = "hybrid")]
    Hybrid,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::ContentOnly => "content",
            FeatureMode::SocialOnly => "social",
            FeatureMode::Hybrid => "hybrid",
        }
    }

    pub fn uses_content(self) -> bool {
        self != FeatureMode::SocialOnly
    }

    pub fn uses_social(self) -> bool {
        self != FeatureMode::ContentOnly
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "content" | "content_only" => Ok(FeatureMode::ContentOnly),
            "social" | "social_only" => Ok(FeatureMode::SocialOnly),
            "hybrid" => Ok(FeatureMode::Hybrid),
            other => Err(format!("unknown feature mode {other:?} (content|social|hybrid)")),
        }
    }
}

/// Fitted vocabulary plus social statistics. Content features occupy
/// `[0, |vocab|)`, social features `[|vocab|, |vocab| + SOCIAL_DIM)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub vocabulary: Vocabulary,
    pub social_feature_names: Vec<String>,
    pub social_stats: Option<SocialStats>,
}

/// Token sequence of an article's headline followed by its text.
pub fn article_tokens(article: &NewsArticle) -> Vec<String> {
    let mut tokens = tokenize(&article.content.headline);
    tokens.extend(tokenize(&article.content.text));
    tokens
}

/// Fits vocabulary and social statistics on (training) articles.
pub fn fit_vocabulary(corpus: &Corpus, config: &FeatureConfig) -> Result<FeatureSpace, FeatureError> {
    FeatureSpace::fit(&corpus.articles.iter().collect::<Vec<_>>(), config)
}

impl FeatureSpace {
    pub fn fit(articles: &[&NewsArticle], config: &FeatureConfig) -> Result<Self, FeatureError> {
        if articles.is_empty() {
            return Err(FeatureError::EmptyCorpus);
        }
        let docs: Vec<Vec<String>> = articles.iter().map(|a| article_tokens(a)).collect();
        let vocabulary = Vocabulary::fit(docs.iter().map(Vec::as_slice), config)?;
        Ok(FeatureSpace {
            vocabulary,
            social_feature_names: SOCIAL_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            social_stats: Some(SocialStats::fit(articles.iter().copied())),
        })
    }

    /// A space with content features only; social modes are rejected.
    pub fn content_only(vocabulary: Vocabulary) -> Self {
        FeatureSpace {
            vocabulary,
            social_feature_names: SOCIAL_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            social_stats: None,
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_dimension(&self) -> usize {
        self.vocabulary.len() + self.social_feature_names.len()
    }

    pub fn check_mode(&self, mode: FeatureMode) -> Result<(), FeatureError> {
        if mode.uses_social() && self.social_stats.is_none() {
            return Err(FeatureError::MissingSocialStats(mode));
        }
        Ok(())
    }

    /// L2-normalized TF-IDF content block over the total dimension.
    pub fn tfidf_tokens(&self, tokens: &[String]) -> FeatureVector {
        let pairs: Vec<(usize, f64)> = self
            .vocabulary
            .counts(tokens)
            .into_iter()
            .map(|(i, tf)| (i, tf * self.vocabulary.idf(i)))
            .collect();
        let norm = pairs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let pairs = if norm > 0.0 {
            pairs.into_iter().map(|(i, v)| (i, v / norm)).collect()
        } else {
            pairs
        };
        FeatureVector::from_pairs(pairs, self.total_dimension())
    }

    /// Standardized social block.
    pub fn social_block(&self, article: &NewsArticle) -> Result<[f64; SOCIAL_DIM], FeatureError> {
        let stats = self
            .social_stats
            .as_ref()
            .ok_or(FeatureError::MissingSocialStats(FeatureMode::SocialOnly))?;
        Ok(stats.standardize(&social_features(article)))
    }

    /// Feature vector for pre-tokenized content. The mode must have been
    /// accepted by [`FeatureSpace::check_mode`].
    pub fn encode_tokens(
        &self,
        tokens: &[String],
        article: &NewsArticle,
        mode: FeatureMode,
    ) -> FeatureVector {
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        if mode.uses_content() {
            pairs.extend(self.tfidf_tokens(tokens).iter());
        }
        if mode.uses_social() {
            let stats = self
                .social_stats
                .as_ref()
                .expect("feature mode checked before encoding");
            let z = stats.standardize(&social_features(article));
            let offset = self.vocab_len();
            pairs.extend(z.iter().enumerate().map(|(j, v)| (offset + j, *v)));
        }
        FeatureVector::from_pairs(pairs, self.total_dimension())
    }

    pub fn encode(&self, article: &NewsArticle, mode: FeatureMode) -> FeatureVector {
        self.encode_tokens(&article_tokens(article), article, mode)
    }

    /// Raw content-term counts over the vocabulary only (multinomial NB input).
    pub fn count_vector(&self, tokens: &[String]) -> FeatureVector {
        FeatureVector::from_pairs(self.vocabulary.counts(tokens), self.vocab_len())
    }
}

/// Content-block TF-IDF vector of an article.
pub fn tfidf_transform(article: &NewsArticle, space: &FeatureSpace) -> FeatureVector {
    space.tfidf_tokens(&article_tokens(article))
}

/// Checked feature vector for an article under `mode`.
pub fn vectorize(
    article: &NewsArticle,
    space: &FeatureSpace,
    mode: FeatureMode,
) -> Result<FeatureVector, FeatureError> {
    space.check_mode(mode)?;
    Ok(space.encode(article, mode))
}

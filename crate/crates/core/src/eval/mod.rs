//! Metrics, model evaluation, the comparison harness and ingestion of
//! externally produced probabilities.

mod metrics;

pub use metrics::{macro_f1, metrics, ClassMetrics, ConfusionMatrix, Metrics};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifiers::argmax_label;
use crate::corpus::{split, Corpus, CorpusError, Label, NewsArticle};
use crate::features::FeatureMode;
use crate::model::{train_model, ModelKind, TrainOptions, TrainedModel};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{0}")]
    Argument(String),
    #[error("article {0} has no gold label")]
    Unlabeled(String),
    #[error("external scores line {line}: {message}")]
    ScoresFormat { line: usize, message: String },
    #[error("external scores reference unknown article ids: {0:?}")]
    UnknownIds(Vec<String>),
    #[error("external scores are missing article ids: {0:?}")]
    MissingIds(Vec<String>),
}

/// Anything that scores whole articles.
pub trait ArticleClassifier: Sync {
    fn name(&self) -> String;

    /// `[p_real, p_fake]` per article, in input order.
    fn predict_proba_batch(&self, articles: &[&NewsArticle]) -> Vec<[f64; 2]>;
}

impl ArticleClassifier for TrainedModel {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn predict_proba_batch(&self, articles: &[&NewsArticle]) -> Vec<[f64; 2]> {
        TrainedModel::predict_proba_batch(self, articles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: String,
    pub corpus_name: String,
    pub seed: Option<u64>,
    pub split_fingerprint: Option<String>,
    pub n_evaluated: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

fn gold_labels(articles: &[&NewsArticle]) -> Result<Vec<Label>, EvalError> {
    articles
        .iter()
        .map(|a| a.label.ok_or_else(|| EvalError::Unlabeled(a.id.clone())))
        .collect()
}

pub fn report_from_predictions(
    model_kind: &str,
    corpus_name: &str,
    seed: Option<u64>,
    pred: &[Label],
    gold: &[Label],
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        model_kind: model_kind.to_string(),
        corpus_name: corpus_name.to_string(),
        seed,
        split_fingerprint: None,
        n_evaluated: gold.len(),
        metrics: metrics(pred, gold)?,
    })
}

pub fn evaluate<C: ArticleClassifier + ?Sized>(model: &C, test: &Corpus, seed: Option<u64>) -> Result<EvalReport, EvalError> {
    let articles: Vec<&NewsArticle> = test.articles.iter().collect();
    let gold = gold_labels(&articles)?;
    let pred: Vec<Label> = model
        .predict_proba_batch(&articles)
        .into_iter()
        .map(argmax_label)
        .collect();
    report_from_predictions(&model.name(), &test.name, seed, &pred, &gold)
}

/// SHA-256 over the train and test id lists, hex encoded.
pub fn split_fingerprint(train: &Corpus, test: &Corpus) -> String {
    let mut h = Sha256::new();
    for (tag, c) in [("train", train), ("test", test)] {
        h.update(tag.as_bytes());
        for a in &c.articles {
            h.update(b"\n");
            h.update(a.id.as_bytes());
        }
        h.update(b"\n\n");
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_kind: String,
    pub status: RowStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub corpus_name: String,
    pub seed: u64,
    pub feature_mode: String,
    pub train_size: usize,
    pub test_size: usize,
    pub split_fingerprint: String,
    /// Best macro-F1 first; failed rows last.
    pub rows: Vec<ComparisonRow>,
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Splits once, then trains and evaluates every entry on the same rows.
/// A failing entry is recorded in the table instead of aborting the run.
pub fn compare_with<F>(
    corpus: &Corpus,
    names: &[String],
    seed: u64,
    feature_mode: FeatureMode,
    fit: F,
) -> Result<ComparisonTable, CorpusError>
where
    F: Fn(&str, &Corpus) -> Result<Box<dyn ArticleClassifier>, String>,
{
    let (train, test) = split(corpus, TRAIN_FRACTION, seed)?;
    let fingerprint = split_fingerprint(&train, &test);
    let mut rows: Vec<ComparisonRow> = names
        .iter()
        .map(|name| {
            let outcome = fit(name, &train).and_then(|m| evaluate(m.as_ref(), &test, Some(seed)).map_err(|e| e.to_string()));
            match outcome {
                Ok(mut report) => {
                    report.model_kind = name.clone();
                    report.corpus_name = corpus.name.clone();
                    report.split_fingerprint = Some(fingerprint.clone());
                    ComparisonRow {
                        model_kind: name.clone(),
                        status: RowStatus::Ok,
                        error: None,
                        report: Some(report),
                    }
                }
                Err(e) => {
                    warn!("{name} failed: {e}");
                    ComparisonRow {
                        model_kind: name.clone(),
                        status: RowStatus::Failed,
                        error: Some(e),
                        report: None,
                    }
                }
            }
        })
        .collect();
    let key = |r: &ComparisonRow| r.report.as_ref().map_or(f64::NEG_INFINITY, |rep| rep.metrics.macro_f1);
    // stable: equal scores keep the requested order
    rows.sort_by(|a, b| key(b).total_cmp(&key(a)));
    Ok(ComparisonTable {
        corpus_name: corpus.name.clone(),
        seed,
        feature_mode: feature_mode.to_string(),
        train_size: train.len(),
        test_size: test.len(),
        split_fingerprint: fingerprint,
        rows,
    })
}

/// [`compare_with`] over registry kinds.
pub fn compare(
    corpus: &Corpus,
    kinds: &[ModelKind],
    seed: u64,
    mode: FeatureMode,
    options: &TrainOptions,
) -> Result<ComparisonTable, CorpusError> {
    let names: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    let mut options = options.clone();
    options.set_seed(seed);
    compare_with(corpus, &names, seed, mode, |name, train| {
        let kind: ModelKind = name.parse()?;
        train_model(train, kind, mode, &options)
            .map(|m| Box::new(m) as Box<dyn ArticleClassifier>)
            .map_err(|e| e.to_string())
    })
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Aligned text table: model, precision, recall, F1, accuracy.
    pub fn to_text(&self) -> String {
        let header = ["Model", "Precision", "Recall", "F1 score", "Accuracy"];
        let mut lines: Vec<[String; 5]> = Vec::new();
        for r in &self.rows {
            lines.push(match &r.report {
                Some(rep) => [
                    r.model_kind.clone(),
                    format!("{:.4}", rep.metrics.macro_precision),
                    format!("{:.4}", rep.metrics.macro_recall),
                    format!("{:.4}", rep.metrics.macro_f1),
                    format!("{:.4}", rep.metrics.accuracy),
                ],
                None => [
                    r.model_kind.clone(),
                    "failed".into(),
                    "failed".into(),
                    "failed".into(),
                    "failed".into(),
                ],
            });
        }
        let mut widths = header.map(str::len);
        for l in &lines {
            for (w, cell) in widths.iter_mut().zip(l) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = format!(
            "corpus {} | seed {} | features {} | train {} / test {}\n",
            self.corpus_name, self.seed, self.feature_mode, self.train_size, self.test_size
        );
        let fmt_row = |cells: &[String]| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for (c, w) in cells[1..].iter().zip(&widths[1..]) {
                s.push_str(&format!("  {c:>w$}"));
            }
            s.trim_end().to_string()
        };
        out.push_str(&fmt_row(&header.map(String::from)));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for l in &lines {
            out.push_str(&fmt_row(l));
            out.push('\n');
        }
        out
    }
}

#[derive(Deserialize)]
struct ScoreLine {
    article_id: String,
    p_fake: f64,
}

/// `article_id -> p_fake` from a third-party model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScores {
    pub scores: BTreeMap<String, f64>,
}

impl ExternalScores {
    /// Reads JSONL lines `{"article_id": str, "p_fake": real}`; blank lines
    /// are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut scores = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| EvalError::ScoresFormat {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let s: ScoreLine = serde_json::from_str(&line).map_err(|e| EvalError::ScoresFormat {
                line: line_no,
                message: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&s.p_fake) {
                return Err(EvalError::ScoresFormat {
                    line: line_no,
                    message: format!("p_fake {} outside [0, 1]", s.p_fake),
                });
            }
            if scores.insert(s.article_id.clone(), s.p_fake).is_some() {
                return Err(EvalError::ScoresFormat {
                    line: line_no,
                    message: format!("duplicate article_id {}", s.article_id),
                });
            }
        }
        Ok(ExternalScores { scores })
    }
}

/// Label is fake iff `p_fake > threshold`.
pub fn evaluate_external(scores: &ExternalScores, test: &Corpus, threshold: f64) -> Result<EvalReport, EvalError> {
    let ids: BTreeSet<&str> = test.articles.iter().map(|a| a.id.as_str()).collect();
    let unknown: Vec<String> = scores.scores.keys().filter(|k| !ids.contains(k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownIds(unknown));
    }
    let missing: Vec<String> = test
        .articles
        .iter()
        .filter(|a| !scores.scores.contains_key(&a.id))
        .map(|a| a.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingIds(missing));
    }
    let articles: Vec<&NewsArticle> = test.articles.iter().collect();
    let gold = gold_labels(&articles)?;
    let pred: Vec<Label> = test
        .articles
        .iter()
        .map(|a| Label::from_index((scores.scores[&a.id] > threshold) as usize))
        .collect();
    report_from_predictions("external", &test.name, None, &pred, &gold)
}

//! LIME for text: mask distinct tokens, weight each perturbation by its
//! proximity to the original, and fit a weighted ridge surrogate whose
//! coefficients are the token importances.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::argmax_label;
use crate::corpus::{Label, NewsArticle};
use crate::features::article_tokens;
use crate::model::TrainedModel;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("nothing to explain: article {0} has no tokens")]
    NothingToExplain(String),
    #[error("invalid LIME config: {0}")]
    Config(String),
    #[error("surrogate normal equations are singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub top_k: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 25.0,
            top_k: 6,
            ridge: 1.0,
            seed: 0,
        }
    }
}

impl LimeConfig {
    fn check(&self) -> Result<(), ExplainError> {
        if self.n_samples < 10 {
            return Err(ExplainError::Config("n_samples must be at least 10".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(ExplainError::Config("kernel_width must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(ExplainError::Config("top_k must be at least 1".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(ExplainError::Config("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub article_id: String,
    /// Predicted label of the unperturbed article.
    pub label: Label,
    pub p_fake: f64,
    /// Sorted by |weight| descending.
    pub tokens: Vec<TokenWeight>,
    pub intercept: f64,
    pub fidelity: f64,
    pub config: LimeConfig,
}

/// Distinct tokens in first-occurrence order.
pub fn distinct_tokens(tokens: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokens.iter().filter(|t| seen.insert(t.as_str())).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// One entry per distinct token; `false` removes every occurrence.
    pub mask: Vec<bool>,
    pub tokens: Vec<String>,
}

pub fn apply_mask(tokens: &[String], distinct: &[String], mask: &[bool]) -> Vec<String> {
    let removed: BTreeSet<&str> = distinct
        .iter()
        .zip(mask)
        .filter(|(_, keep)| !**keep)
        .map(|(t, _)| t.as_str())
        .collect();
    tokens.iter().filter(|t| !removed.contains(t.as_str())).cloned().collect()
}

/// Mask stream: the identity first, then masks that zero `k ~ U{1..m}`
/// uniformly chosen positions.
pub fn sample_masks(m: usize, n_samples: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_samples);
    if n_samples == 0 || m == 0 {
        return masks;
    }
    masks.push(vec![true; m]);
    for _ in 1..n_samples {
        let k = rng.random_range(1..=m);
        let mut mask = vec![true; m];
        for i in sample(&mut rng, m, k) {
            mask[i] = false;
        }
        masks.push(mask);
    }
    masks
}

pub fn perturb(tokens: &[String], config: &LimeConfig) -> Vec<Perturbation> {
    let distinct = distinct_tokens(tokens);
    sample_masks(distinct.len(), config.n_samples, config.seed)
        .into_iter()
        .map(|mask| Perturbation {
            tokens: apply_mask(tokens, &distinct, &mask),
            mask,
        })
        .collect()
}

/// `exp(-d^2 / sigma^2)` with `d` the cosine distance to the all-ones mask
/// (1 for the all-zero mask).
pub fn proximity(mask: &[bool], sigma: f64) -> f64 {
    let kept = mask.iter().filter(|b| **b).count();
    let d = if kept == 0 {
        1.0
    } else {
        1.0 - kept as f64 / ((kept as f64).sqrt() * (mask.len() as f64).sqrt())
    };
    (-(d * d) / (sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl Surrogate {
    pub fn predict(&self, mask: &[bool]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(mask)
                .filter(|(_, z)| **z)
                .map(|(c, _)| c)
                .sum::<f64>()
    }
}

/// Weighted ridge `argmin sum w_i (p_i - b.z_i - b0)^2 + lambda |b|^2` via the
/// normal equations; the intercept is not penalized.
pub fn fit_surrogate(masks: &[Vec<bool>], targets: &[f64], weights: &[f64], lambda: f64) -> Result<Surrogate, ExplainError> {
    let m = masks.first().map_or(0, Vec::len);
    let dim = m + 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    let mut x = DVector::<f64>::zeros(dim);
    for ((mask, &p), &w) in masks.iter().zip(targets).zip(weights) {
        x[0] = 1.0;
        for (j, &z) in mask.iter().enumerate() {
            x[j + 1] = if z { 1.0 } else { 0.0 };
        }
        a.ger(w, &x, &x, 1.0);
        b.axpy(w * p, &x, 1.0);
    }
    for j in 1..dim {
        a[(j, j)] += lambda;
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).ok_or(ExplainError::Singular)?,
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(ExplainError::Singular);
    }
    Ok(Surrogate {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

/// Weighted R^2; a target without variance counts as perfectly fit.
pub fn weighted_r2(targets: &[f64], fitted: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    let mean = targets.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let ss_tot: f64 = targets.iter().zip(weights).map(|(y, w)| w * (y - mean).powi(2)).sum();
    let ss_res: f64 = targets
        .iter()
        .zip(fitted)
        .zip(weights)
        .map(|((y, f), w)| w * (y - f).powi(2))
        .sum();
    if ss_tot <= 1e-24 * wsum.max(1.0) {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Explains any token-level scorer. `p_fake` receives the kept tokens of each
/// perturbation; evaluation runs in parallel over a mask list fixed up front.
pub fn explain_tokens<F>(article_id: &str, tokens: &[String], p_fake: F, config: &LimeConfig) -> Result<Explanation, ExplainError>
where
    F: Fn(&[String]) -> f64 + Sync,
{
    config.check()?;
    let distinct = distinct_tokens(tokens);
    if distinct.is_empty() {
        return Err(ExplainError::NothingToExplain(article_id.to_string()));
    }
    let samples = perturb(tokens, config);
    let targets: Vec<f64> = samples.par_iter().map(|s| p_fake(&s.tokens)).collect();
    let masks: Vec<Vec<bool>> = samples.into_iter().map(|s| s.mask).collect();
    let weights: Vec<f64> = masks.iter().map(|m| proximity(m, config.kernel_width)).collect();
    let surrogate = fit_surrogate(&masks, &targets, &weights, config.ridge)?;
    let fitted: Vec<f64> = masks.iter().map(|m| surrogate.predict(m)).collect();
    let fidelity = weighted_r2(&targets, &fitted, &weights);

    let mut order: Vec<usize> = (0..distinct.len()).collect();
    // stable sort: equal magnitudes keep first-occurrence order
    order.sort_by(|&a, &b| surrogate.coefficients[b].abs().total_cmp(&surrogate.coefficients[a].abs()));
    let p = targets[0];
    Ok(Explanation {
        article_id: article_id.to_string(),
        label: argmax_label([1.0 - p, p]),
        p_fake: p,
        tokens: order
            .into_iter()
            .take(config.top_k)
            .map(|i| TokenWeight {
                token: distinct[i].clone(),
                weight: surrogate.coefficients[i],
            })
            .collect(),
        intercept: surrogate.intercept,
        fidelity,
        config: config.clone(),
    })
}

/// Explains a trained model's prediction; the social block stays at the
/// article's own values for every perturbation.
pub fn explain(model: &TrainedModel, article: &NewsArticle, config: &LimeConfig) -> Result<Explanation, ExplainError> {
    let encoder = model.encoder();
    let tokens = article_tokens(article);
    explain_tokens(&article.id, &tokens, |kept| model.p_fake(&encoder.inputs(kept, article)), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Json,
    Html,
    Text,
}

impl std::str::FromStr for RenderFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(RenderFormat::Json),
            "html" => Ok(RenderFormat::Html),
            "text" => Ok(RenderFormat::Text),
            other => Err(format!("unknown format {other:?}; expected json, html or text")),
        }
    }
}

fn direction(weight: f64) -> &'static str {
    if weight > 0.0 {
        "fake"
    } else if weight < 0.0 {
        "real"
    } else {
        "none"
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn render(e: &Explanation, format: RenderFormat) -> String {
    match format {
        RenderFormat::Json => serde_json::to_string_pretty(e).expect("explanation serializes"),
        RenderFormat::Text => render_text(e),
        RenderFormat::Html => render_html(e, None),
    }
}

fn render_text(e: &Explanation) -> String {
    let mut out = format!(
        "article {}  predicted {}  p_fake {:.4}  fidelity {:.4}\n",
        e.article_id,
        if e.label == Label::Fake { "fake" } else { "real" },
        e.p_fake,
        e.fidelity
    );
    let weights: Vec<String> = e.tokens.iter().map(|t| format!("{:+.6}", t.weight)).collect();
    let tw = e.tokens.iter().map(|t| t.token.chars().count()).max().unwrap_or(0).max(5);
    let ww = weights.iter().map(String::len).max().unwrap_or(0).max(6);
    let _ = writeln!(out, "{:<tw$}  {:>ww$}  direction", "token", "weight");
    let _ = writeln!(out, "{}", "-".repeat(tw + ww + 13));
    for (t, w) in e.tokens.iter().zip(&weights) {
        let pad = tw - t.token.chars().count();
        let _ = writeln!(out, "{}{}  {:>ww$}  {}", t.token, " ".repeat(pad), w, direction(t.weight));
    }
    out
}

/// Self-contained page: explained tokens highlighted in the text (green
/// pushes toward fake, red toward real) and a bar per weight.
pub fn render_html(e: &Explanation, text_tokens: Option<&[String]>) -> String {
    let max = e.tokens.iter().map(|t| t.weight.abs()).fold(0.0, f64::max);
    let color = |w: f64| if w > 0.0 { "#2e7d32" } else { "#c62828" };
    let mark = |t: &TokenWeight| {
        format!(
            "<mark data-token=\"{}\" style=\"background:{};color:#fff;padding:0 2px\">{}</mark>",
            escape_html(&t.token),
            color(t.weight),
            escape_html(&t.token)
        )
    };
    let mut body = String::new();
    let _ = write!(
        body,
        "<h1>Explanation for {}</h1>\n<p>Predicted <b>{}</b> with p_fake = {:.4}; local fidelity {:.4}.</p>\n",
        escape_html(&e.article_id),
        if e.label == Label::Fake { "fake" } else { "real" },
        e.p_fake,
        e.fidelity
    );
    body.push_str("<p class=\"text\">");
    match text_tokens {
        Some(tokens) => {
            for (i, tok) in tokens.iter().enumerate() {
                if i > 0 {
                    body.push(' ');
                }
                match e.tokens.iter().find(|t| &t.token == tok) {
                    Some(t) => body.push_str(&mark(t)),
                    None => body.push_str(&escape_html(tok)),
                }
            }
        }
        None => {
            let marks: Vec<String> = e.tokens.iter().map(mark).collect();
            body.push_str(&marks.join(" "));
        }
    }
    body.push_str("</p>\n<table>\n");
    for t in &e.tokens {
        let width = if max > 0.0 { 300.0 * t.weight.abs() / max } else { 0.0 };
        let _ = writeln!(
            body,
            "<tr><td>{}</td><td><div style=\"width:{width:.1}px;height:12px;background:{}\"></div></td><td>{:+.6}</td><td>{}</td></tr>",
            escape_html(&t.token),
            color(t.weight),
            t.weight,
            direction(t.weight)
        );
    }
    body.push_str("</table>\n");
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>LIME explanation</title>\
         <style>body{{font-family:sans-serif;max-width:50em;margin:2em auto}}td{{padding:2px 8px}}</style>\
         </head><body>\n{body}</body></html>\n"
    )
}

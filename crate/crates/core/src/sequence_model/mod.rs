//! GRU text classifier trained from scratch with backpropagation through time.
//!
//! Token index 0 is padding and is skipped by the recurrence, so its
//! embedding column stays zero forever; index 1 is the shared out-of-vocabulary
//! token. The standardized social block joins the final hidden state at the
//! output layer.

mod cell;

pub use cell::{final_hidden, forward, gru_step, loss, loss_and_grad};

use std::collections::BTreeMap;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::distr::Uniform;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{argmax_label, proba, TrainError};
use crate::corpus::{Label, NewsArticle};
use crate::eval::macro_f1;
use crate::features::{article_tokens, FeatureMode, FeatureSpace, SOCIAL_DIM};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SequenceError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    pub d_e: usize,
    pub d_h: usize,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            d_e: 64,
            d_h: 64,
            max_seq_len: 128,
            epochs: 12,
            batch_size: 16,
            learning_rate: 0.5,
            grad_clip: 5.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl GruConfig {
    fn check(&self) -> Result<(), TrainError> {
        let positive = self.d_e > 0 && self.d_h > 0 && self.max_seq_len > 0 && self.batch_size > 0;
        if !positive || !(self.grad_clip > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(TrainError::Config(format!("invalid GRU config {self:?}")));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(TrainError::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// GRU weights. The embedding is stored one column per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "wire::ParamsWire", into = "wire::ParamsWire")]
pub struct GruParams {
    pub embedding: DMatrix<f64>,
    pub w_z: DMatrix<f64>,
    pub w_r: DMatrix<f64>,
    pub w_h: DMatrix<f64>,
    pub u_z: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub u_h: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub b_r: DVector<f64>,
    pub b_h: DVector<f64>,
    /// Output weights over `[h_T; social]`.
    pub v: DVector<f64>,
    pub c: f64,
}

impl GruParams {
    pub fn zeros(n_vocab: usize, d_e: usize, d_h: usize, n_social: usize) -> Self {
        GruParams {
            embedding: DMatrix::zeros(d_e, n_vocab),
            w_z: DMatrix::zeros(d_h, d_e),
            w_r: DMatrix::zeros(d_h, d_e),
            w_h: DMatrix::zeros(d_h, d_e),
            u_z: DMatrix::zeros(d_h, d_h),
            u_r: DMatrix::zeros(d_h, d_h),
            u_h: DMatrix::zeros(d_h, d_h),
            b_z: DVector::zeros(d_h),
            b_r: DVector::zeros(d_h),
            b_h: DVector::zeros(d_h),
            v: DVector::zeros(d_h + n_social),
            c: 0.0,
        }
    }

    /// Weights and embeddings from U(-0.08, 0.08); biases and the padding
    /// embedding start at zero.
    pub fn init(n_vocab: usize, d_e: usize, d_h: usize, n_social: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(n_vocab, d_e, d_h, n_social);
        let u = Uniform::new_inclusive(-0.08, 0.08).expect("valid range");
        for m in [&mut p.embedding, &mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h] {
            m.iter_mut().for_each(|x| *x = rng.sample(u));
        }
        p.v.iter_mut().for_each(|x| *x = rng.sample(u));
        if n_vocab > PAD as usize {
            p.embedding.column_mut(PAD as usize).fill(0.0);
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_vocab(), self.d_e(), self.d_h(), self.n_social())
    }

    pub fn n_vocab(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn d_e(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.b_z.len()
    }

    pub fn n_social(&self) -> usize {
        self.v.len() - self.d_h()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.embedding.as_slice(),
            self.w_z.as_slice(),
            self.w_r.as_slice(),
            self.w_h.as_slice(),
            self.u_z.as_slice(),
            self.u_r.as_slice(),
            self.u_h.as_slice(),
            self.b_z.as_slice(),
            self.b_r.as_slice(),
            self.b_h.as_slice(),
            self.v.as_slice(),
            std::slice::from_ref(&self.c),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embedding.as_mut_slice(),
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_h.as_mut_slice(),
            self.b_z.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.b_h.as_mut_slice(),
            self.v.as_mut_slice(),
            std::slice::from_mut(&mut self.c),
        ]
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn coordinate_mut(&mut self, mut k: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if k < t.len() {
                return &mut t[k];
            }
            k -= t.len();
        }
        panic!("coordinate out of range")
    }

    fn coordinate(&self, mut k: usize) -> f64 {
        for t in self.tensors() {
            if k < t.len() {
                return t[k];
            }
            k -= t.len();
        }
        panic!("coordinate out of range")
    }

    fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self -= lr * grads`
    fn descend(&mut self, grads: &GruParams, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
    }
}

mod wire {
    use super::*;

    /// Row-major matrix.
    #[derive(Serialize, Deserialize)]
    pub struct Tensor {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    impl Tensor {
        fn from_matrix(m: &DMatrix<f64>) -> Self {
            Tensor {
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.transpose().as_slice().to_vec(),
            }
        }

        fn into_matrix(self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
            if self.rows != rows || self.cols != cols || self.data.len() != rows * cols {
                return Err(format!(
                    "{name}: expected {rows}x{cols}, found {}x{} with {} values",
                    self.rows,
                    self.cols,
                    self.data.len()
                ));
            }
            Ok(DMatrix::from_row_slice(rows, cols, &self.data))
        }
    }

    #[derive(Serialize, Deserialize)]
    pub struct ParamsWire {
        /// `n_vocab x d_e`, one row per token.
        embedding: Tensor,
        w_z: Tensor,
        w_r: Tensor,
        w_h: Tensor,
        u_z: Tensor,
        u_r: Tensor,
        u_h: Tensor,
        b_z: Vec<f64>,
        b_r: Vec<f64>,
        b_h: Vec<f64>,
        v: Vec<f64>,
        c: f64,
    }

    impl From<GruParams> for ParamsWire {
        fn from(p: GruParams) -> Self {
            ParamsWire {
                embedding: Tensor::from_matrix(&p.embedding.transpose()),
                w_z: Tensor::from_matrix(&p.w_z),
                w_r: Tensor::from_matrix(&p.w_r),
                w_h: Tensor::from_matrix(&p.w_h),
                u_z: Tensor::from_matrix(&p.u_z),
                u_r: Tensor::from_matrix(&p.u_r),
                u_h: Tensor::from_matrix(&p.u_h),
                b_z: p.b_z.as_slice().to_vec(),
                b_r: p.b_r.as_slice().to_vec(),
                b_h: p.b_h.as_slice().to_vec(),
                v: p.v.as_slice().to_vec(),
                c: p.c,
            }
        }
    }

    impl TryFrom<ParamsWire> for GruParams {
        type Error = String;

        fn try_from(w: ParamsWire) -> Result<Self, String> {
            let (n_vocab, d_e) = (w.embedding.rows, w.embedding.cols);
            let d_h = w.b_z.len();
            if w.b_r.len() != d_h || w.b_h.len() != d_h || w.v.len() < d_h {
                return Err("inconsistent bias or output sizes".into());
            }
            Ok(GruParams {
                embedding: w.embedding.into_matrix("embedding", n_vocab, d_e)?.transpose(),
                w_z: w.w_z.into_matrix("w_z", d_h, d_e)?,
                w_r: w.w_r.into_matrix("w_r", d_h, d_e)?,
                w_h: w.w_h.into_matrix("w_h", d_h, d_e)?,
                u_z: w.u_z.into_matrix("u_z", d_h, d_h)?,
                u_r: w.u_r.into_matrix("u_r", d_h, d_h)?,
                u_h: w.u_h.into_matrix("u_h", d_h, d_h)?,
                b_z: DVector::from_vec(w.b_z),
                b_r: DVector::from_vec(w.b_r),
                b_h: DVector::from_vec(w.b_h),
                v: DVector::from_vec(w.v),
                c: w.c,
            })
        }
    }
}

/// One training or evaluation instance for the sequence model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqExample {
    pub ids: Vec<u32>,
    pub social: Vec<f64>,
    pub label: Label,
}

/// Token ids for the vocabulary's word unigrams, starting after PAD and UNK.
pub fn token_index<'a>(words: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u32> {
    words
        .into_iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), i as u32 + 2))
        .collect()
}

pub fn encode_tokens(token_ids: &BTreeMap<String, u32>, tokens: &[String], max_seq_len: usize) -> Vec<u32> {
    tokens
        .iter()
        .take(max_seq_len)
        .map(|t| token_ids.get(t).copied().unwrap_or(UNK))
        .collect()
}

fn stratified_holdout(labels: &[Label], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for class in [Label::Real, Label::Fake] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let k = ((fraction * members.len() as f64).round() as usize).min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..k]);
        fit.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

fn validation_f1(params: &GruParams, examples: &[SeqExample], idx: &[usize]) -> f64 {
    let pred: Vec<Label> = idx
        .iter()
        .map(|&i| argmax_label(proba(forward(params, &examples[i].ids, &examples[i].social))))
        .collect();
    let gold: Vec<Label> = idx.iter().map(|&i| examples[i].label).collect();
    macro_f1(&pred, &gold)
}

/// Mini-batch SGD with global-norm clipping. The parameters with the best
/// macro-F1 on a stratified validation hold-out are returned (the earliest
/// epoch wins ties). With no usable hold-out the training rows stand in.
pub fn gru_fit(examples: &[SeqExample], n_vocab: usize, config: &GruConfig) -> Result<GruParams, TrainError> {
    config.check()?;
    if examples.is_empty() {
        return Err(TrainError::Input("no training examples".into()));
    }
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    if !labels.contains(&Label::Real) || !labels.contains(&Label::Fake) {
        return Err(TrainError::Input("GRU training needs both labels".into()));
    }
    let n_social = examples[0].social.len();
    if examples.iter().any(|e| e.social.len() != n_social || e.ids.iter().any(|&i| i as usize >= n_vocab)) {
        return Err(TrainError::Input("inconsistent social block or token id out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = GruParams::init(n_vocab, config.d_e, config.d_h, n_social, &mut rng);
    let (fit_idx, mut val_idx) = stratified_holdout(&labels, config.validation_fraction, &mut rng);
    if val_idx.is_empty() {
        val_idx = fit_idx.clone();
    }
    let truncated: Vec<SeqExample> = examples
        .iter()
        .map(|e| SeqExample {
            ids: e.ids.iter().copied().take(config.max_seq_len).collect(),
            ..e.clone()
        })
        .collect();

    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut order = fit_idx.clone();
    let mut grads = params.zeros_like();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.scale(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &truncated[i];
                batch_loss += cell::accumulate_grad(&params, &e.ids, &e.social, e.label.as_f64(), &mut grads);
            }
            let bn = batch.len() as f64;
            batch_loss /= bn;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite { step, loss: batch_loss });
            }
            grads.scale(1.0 / bn);
            let norm = grads.global_norm();
            if norm > config.grad_clip {
                grads.scale(config.grad_clip / norm);
            }
            params.descend(&grads, config.learning_rate);
            epoch_loss += batch_loss * bn;
            step += 1;
        }
        let f1 = validation_f1(&params, &truncated, &val_idx);
        debug!(
            "gru epoch {epoch}: train loss {:.5}, validation macro-F1 {f1:.4}",
            epoch_loss / fit_idx.len() as f64
        );
        if f1 > best_f1 {
            best_f1 = f1;
            best = params.clone();
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruModel {
    pub config: GruConfig,
    pub mode: FeatureMode,
    pub token_ids: BTreeMap<String, u32>,
    pub params: GruParams,
}

impl GruModel {
    pub fn n_vocab(&self) -> usize {
        self.token_ids.len() + 2
    }

    /// Token ids and social block as the model sees them under its mode.
    pub fn example(&self, space: &FeatureSpace, tokens: &[String], article: &NewsArticle) -> (Vec<u32>, Vec<f64>) {
        sequence_input(&self.token_ids, space, self.mode, tokens, article, self.config.max_seq_len)
    }

    pub fn p_fake(&self, ids: &[u32], social: &[f64]) -> f64 {
        forward(&self.params, ids, social)
    }
}

/// Sequence-model view of an article: content mode zeroes the social block,
/// social mode drops the tokens.
pub fn sequence_input(
    token_ids: &BTreeMap<String, u32>,
    space: &FeatureSpace,
    mode: FeatureMode,
    tokens: &[String],
    article: &NewsArticle,
    max_seq_len: usize,
) -> (Vec<u32>, Vec<f64>) {
    let ids = match mode {
        FeatureMode::SocialOnly => Vec::new(),
        _ => encode_tokens(token_ids, tokens, max_seq_len),
    };
    let social = match mode {
        FeatureMode::ContentOnly => vec![0.0; SOCIAL_DIM],
        _ => space
            .social_block(article)
            .map(|s| s.to_vec())
            .unwrap_or_else(|_| vec![0.0; SOCIAL_DIM]),
    };
    (ids, social)
}

/// Trains on labeled articles with the given (already fitted) feature space.
pub fn train(
    articles: &[&NewsArticle],
    space: &FeatureSpace,
    mode: FeatureMode,
    config: &GruConfig,
) -> Result<GruModel, TrainError> {
    space.check_mode(mode).map_err(|e| TrainError::Input(e.to_string()))?;
    let token_ids = token_index(space.vocabulary.word_unigrams());
    let mut examples = Vec::with_capacity(articles.len());
    for a in articles {
        let label = a
            .label
            .ok_or_else(|| TrainError::Input(format!("article {} has no label", a.id)))?;
        let (ids, social) = sequence_input(&token_ids, space, mode, &article_tokens(a), a, config.max_seq_len);
        examples.push(SeqExample { ids, social, label });
    }
    let params = gru_fit(&examples, token_ids.len() + 2, config)?;
    Ok(GruModel {
        config: config.clone(),
        mode,
        token_ids,
        params,
    })
}

/// Largest relative error between the analytic gradient and central
/// differences of step `h`, over every coordinate when there are at most 200
/// and over a seeded sample of 200 otherwise.
pub fn grad_check(params: &GruParams, example: &SeqExample, h: f64) -> f64 {
    grad_check_with(params, example, h, |p, e| {
        loss_and_grad(p, &e.ids, &e.social, e.label.as_f64()).1
    })
}

pub(crate) fn grad_check_with(
    params: &GruParams,
    example: &SeqExample,
    h: f64,
    gradient: impl Fn(&GruParams, &SeqExample) -> GruParams,
) -> f64 {
    let analytic = gradient(params, example);
    let total = params.n_parameters();
    let coords: Vec<usize> = if total <= 200 {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6AD_C4EC);
        let mut v = sample(&mut rng, total, 200).into_vec();
        v.sort_unstable();
        v
    };
    let y = example.label.as_f64();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in coords {
        let orig = params.coordinate(k);
        *probe.coordinate_mut(k) = orig + h;
        let up = loss(&probe, &example.ids, &example.social, y);
        *probe.coordinate_mut(k) = orig - h;
        let down = loss(&probe, &example.ids, &example.social, y);
        *probe.coordinate_mut(k) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.coordinate(k);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

//! Model registry, the article-level prediction interface, and the versioned
//! JSON envelope for trained models.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{
    forest_fit, gbdt_fit, hybrid_nb_fit, logreg_fit, svm_fit, tree_fit, DecisionTree, ForestConfig, ForestModel,
    GbdtConfig, GbdtModel, LogRegConfig, HybridNb, LogisticRegression, ProbClassifier, SvmConfig, SvmModel,
    TrainError, TreeConfig,
};
use crate::corpus::{split, Corpus, Label, NewsArticle};
use crate::eval::split_fingerprint;
use crate::ensemble::{stack_fit, EnsembleError, StackConfig, StackedModel};
use crate::features::{
    article_tokens, FeatureConfig, FeatureError, FeatureMode, FeatureSpace, FeatureVector,
};
use crate::sequence_model::{gru_fit, sequence_input, token_index, GruConfig, GruModel, SeqExample};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Nb,
    Logreg,
    Svm,
    Dtree,
    Rforest,
    Gbdt,
    Gru,
    EnsembleMl,
    EnsembleNn,
}

impl ModelKind {
    /// Canonical order; also the tie-break order when ranking.
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Nb,
        ModelKind::Logreg,
        ModelKind::Svm,
        ModelKind::Dtree,
        ModelKind::Rforest,
        ModelKind::Gbdt,
        ModelKind::Gru,
        ModelKind::EnsembleMl,
        ModelKind::EnsembleNn,
    ];

    pub const CLASSICAL: [ModelKind; 6] = [
        ModelKind::Nb,
        ModelKind::Logreg,
        ModelKind::Svm,
        ModelKind::Dtree,
        ModelKind::Rforest,
        ModelKind::Gbdt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nb => "nb",
            ModelKind::Logreg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::Dtree => "dtree",
            ModelKind::Rforest => "rforest",
            ModelKind::Gbdt => "gbdt",
            ModelKind::Gru => "gru",
            ModelKind::EnsembleMl => "ensemble-ml",
            ModelKind::EnsembleNn => "ensemble-nn",
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, ModelKind::EnsembleMl | ModelKind::EnsembleNn)
    }

    /// Base-model candidates of an ensemble preset. The "nn" preset has a
    /// single recurrent model, so classical learners fill the other slots.
    pub fn ensemble_members(self) -> &'static [ModelKind] {
        match self {
            ModelKind::EnsembleMl => &ModelKind::CLASSICAL,
            ModelKind::EnsembleNn => &[ModelKind::Gru, ModelKind::Svm, ModelKind::Logreg, ModelKind::Nb],
            _ => &[],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown model kind {s:?}; expected one of {}", names.join(", "))
            })
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hyperparameters for every kind. [`TrainOptions::seeded`] threads one seed
/// through all stochastic components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub features: FeatureConfig,
    pub nb_alpha: f64,
    pub logreg: LogRegConfig,
    pub svm: SvmConfig,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub gbdt: GbdtConfig,
    pub gru: GruConfig,
    pub stack: StackConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            features: FeatureConfig::default(),
            nb_alpha: 1.0,
            logreg: LogRegConfig::default(),
            svm: SvmConfig::default(),
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            gbdt: GbdtConfig::default(),
            gru: GruConfig::default(),
            stack: StackConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn seeded(seed: u64) -> Self {
        let mut o = TrainOptions::default();
        o.set_seed(seed);
        o
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.logreg.seed = seed;
        self.svm.seed = seed;
        self.tree.seed = seed;
        self.forest.seed = seed;
        self.gru.seed = seed;
        self.stack.seed = seed;
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{0}")]
    Input(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Format(String),
}

/// Everything a fitted model may read from one article: the mode-specific
/// feature vector, raw content counts, the token-id sequence and the social
/// block.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub vector: FeatureVector,
    pub counts: FeatureVector,
    pub sequence: Vec<u32>,
    pub social: Vec<f64>,
}

/// Turns articles (or token variants of them) into [`Inputs`].
pub struct Encoder<'a> {
    pub space: &'a FeatureSpace,
    pub mode: FeatureMode,
    token_ids: BTreeMap<String, u32>,
}

impl<'a> Encoder<'a> {
    pub fn new(space: &'a FeatureSpace, mode: FeatureMode) -> Result<Self, FeatureError> {
        space.check_mode(mode)?;
        Ok(Encoder {
            space,
            mode,
            token_ids: token_index(space.vocabulary.word_unigrams()),
        })
    }

    pub fn n_token_ids(&self) -> usize {
        self.token_ids.len() + 2
    }

    pub fn token_ids(&self) -> &BTreeMap<String, u32> {
        &self.token_ids
    }

    /// `tokens` stand in for the article's content; the social block always
    /// comes from `article`.
    pub fn inputs(&self, tokens: &[String], article: &NewsArticle) -> Inputs {
        let (sequence, social) = sequence_input(&self.token_ids, self.space, self.mode, tokens, article, usize::MAX);
        Inputs {
            vector: self.space.encode_tokens(tokens, article, self.mode),
            counts: self.space.count_vector(tokens),
            sequence,
            social,
        }
    }

    pub fn article(&self, article: &NewsArticle) -> Inputs {
        self.inputs(&article_tokens(article), article)
    }
}

/// A fitted model scoring prepared inputs.
pub trait ProbModel: Send + Sync {
    fn p_fake(&self, x: &Inputs) -> f64;
}

/// Something that can be fit on a subset of prepared rows.
pub trait Learner: Sync {
    type Model: ProbModel;

    fn name(&self) -> String;

    fn fit(&self, data: &[Inputs], labels: &[Label], rows: &[usize]) -> Result<Self::Model, TrainError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum BaseModel {
    Nb(HybridNb),
    Logreg(LogisticRegression),
    Svm(SvmModel),
    Dtree(DecisionTree),
    Rforest(ForestModel),
    Gbdt(GbdtModel),
    Gru(GruModel),
}

impl BaseModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            BaseModel::Nb(_) => ModelKind::Nb,
            BaseModel::Logreg(_) => ModelKind::Logreg,
            BaseModel::Svm(_) => ModelKind::Svm,
            BaseModel::Dtree(_) => ModelKind::Dtree,
            BaseModel::Rforest(_) => ModelKind::Rforest,
            BaseModel::Gbdt(_) => ModelKind::Gbdt,
            BaseModel::Gru(_) => ModelKind::Gru,
        }
    }
}

impl ProbModel for BaseModel {
    fn p_fake(&self, x: &Inputs) -> f64 {
        match self {
            BaseModel::Nb(m) => m.predict_proba(&x.counts, &x.social)[1],
            BaseModel::Logreg(m) => m.predict_proba(&x.vector)[1],
            BaseModel::Svm(m) => m.predict_proba(&x.vector)[1],
            BaseModel::Dtree(m) => m.predict_proba(&x.vector)[1],
            BaseModel::Rforest(m) => m.predict_proba(&x.vector)[1],
            BaseModel::Gbdt(m) => m.predict_proba(&x.vector)[1],
            BaseModel::Gru(m) => {
                let n = x.sequence.len().min(m.config.max_seq_len);
                m.p_fake(&x.sequence[..n], &x.social)
            }
        }
    }
}

/// Fits one base kind from [`TrainOptions`].
#[derive(Debug, Clone)]
pub struct BaseLearner {
    pub kind: ModelKind,
    pub mode: FeatureMode,
    pub options: TrainOptions,
    /// Token ids for the sequence model, shared with the encoder.
    pub token_ids: BTreeMap<String, u32>,
}

impl BaseLearner {
    pub fn new(kind: ModelKind, encoder: &Encoder<'_>, options: &TrainOptions) -> Self {
        BaseLearner {
            kind,
            mode: encoder.mode,
            options: options.clone(),
            token_ids: encoder.token_ids().clone(),
        }
    }
}

fn gather(rows: &[usize], f: impl Fn(usize) -> FeatureVector) -> Vec<FeatureVector> {
    rows.iter().map(|&i| f(i)).collect()
}

impl Learner for BaseLearner {
    type Model = BaseModel;

    fn name(&self) -> String {
        self.kind.as_str().to_string()
    }

    fn fit(&self, data: &[Inputs], labels: &[Label], rows: &[usize]) -> Result<BaseModel, TrainError> {
        let y: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
        let o = &self.options;
        let vectors = || gather(rows, |i| data[i].vector.clone());
        Ok(match self.kind {
            ModelKind::Nb => {
                let counts = self.mode.uses_content().then(|| gather(rows, |i| data[i].counts.clone()));
                let social: Option<Vec<Vec<f64>>> = self
                    .mode
                    .uses_social()
                    .then(|| rows.iter().map(|&i| data[i].social.clone()).collect());
                BaseModel::Nb(hybrid_nb_fit(counts.as_deref(), social.as_deref(), &y, o.nb_alpha)?)
            }
            ModelKind::Logreg => BaseModel::Logreg(logreg_fit(&vectors(), &y, &o.logreg)?),
            ModelKind::Svm => BaseModel::Svm(svm_fit(&vectors(), &y, &o.svm)?),
            ModelKind::Dtree => BaseModel::Dtree(tree_fit(&vectors(), &y, &o.tree)?),
            ModelKind::Rforest => BaseModel::Rforest(forest_fit(&vectors(), &y, &o.forest)?),
            ModelKind::Gbdt => BaseModel::Gbdt(gbdt_fit(&vectors(), &y, &o.gbdt)?),
            ModelKind::Gru => {
                let examples: Vec<SeqExample> = rows
                    .iter()
                    .map(|&i| SeqExample {
                        ids: data[i].sequence.clone(),
                        social: data[i].social.clone(),
                        label: labels[i],
                    })
                    .collect();
                let params = gru_fit(&examples, self.token_ids.len() + 2, &o.gru)?;
                BaseModel::Gru(GruModel {
                    config: o.gru.clone(),
                    mode: self.mode,
                    token_ids: self.token_ids.clone(),
                    params,
                })
            }
            ModelKind::EnsembleMl | ModelKind::EnsembleNn => {
                return Err(TrainError::Config(format!("{} is not a base model", self.kind)))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelBody {
    Base { model: BaseModel },
    Stacked { model: StackedModel<BaseModel> },
}

/// A fitted model of any registry kind, with the feature space it was fit in.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub mode: FeatureMode,
    pub space: FeatureSpace,
    pub body: ModelBody,
    /// Which rows the model was fit on, when it came from a seeded split.
    pub training: Option<TrainingSplit>,
}

/// Enough to reproduce the split a model was trained on and to recognize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSplit {
    pub corpus_name: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub n_train: usize,
    /// [`crate::eval::split_fingerprint`] of the train/test halves.
    pub fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct EnvelopeParameters {
    feature_mode: FeatureMode,
    #[serde(flatten)]
    body: ModelBody,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model_kind: ModelKind,
    feature_space: FeatureSpace,
    parameters: EnvelopeParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingSplit>,
}

pub fn labeled(articles: &[&NewsArticle]) -> Result<Vec<Label>, ModelError> {
    articles
        .iter()
        .map(|a| {
            a.label
                .ok_or_else(|| ModelError::Input(format!("article {} has no label", a.id)))
        })
        .collect()
}

/// Fits the feature space on `train` and then the requested kind.
pub fn train_model(
    train: &Corpus,
    kind: ModelKind,
    mode: FeatureMode,
    options: &TrainOptions,
) -> Result<TrainedModel, ModelError> {
    let articles: Vec<&NewsArticle> = train.articles.iter().collect();
    let labels = labeled(&articles)?;
    let space = FeatureSpace::fit(&articles, &options.features)?;
    let body = {
        let encoder = Encoder::new(&space, mode)?;
        let data: Vec<Inputs> = articles.par_iter().map(|a| encoder.article(a)).collect();
        let all: Vec<usize> = (0..data.len()).collect();
        if kind.is_ensemble() {
            let candidates: Vec<BaseLearner> = kind
                .ensemble_members()
                .iter()
                .map(|&k| BaseLearner::new(k, &encoder, options))
                .collect();
            ModelBody::Stacked {
                model: stack_fit(&candidates, &data, &labels, &options.stack)?,
            }
        } else {
            ModelBody::Base {
                model: BaseLearner::new(kind, &encoder, options).fit(&data, &labels, &all)?,
            }
        }
    };
    Ok(TrainedModel {
        kind,
        mode,
        space,
        body,
        training: None,
    })
}

/// Splits `corpus`, trains on the training half and records the split in the
/// model. Returns the held-out half alongside.
pub fn train_on_split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
    kind: ModelKind,
    mode: FeatureMode,
    options: &TrainOptions,
) -> Result<(TrainedModel, Corpus), ModelError> {
    let (train, test) = split(corpus, train_fraction, seed).map_err(|e| ModelError::Input(e.to_string()))?;
    let mut model = train_model(&train, kind, mode, options)?;
    model.training = Some(TrainingSplit {
        corpus_name: corpus.name.clone(),
        seed,
        train_fraction,
        n_train: train.len(),
        fingerprint: split_fingerprint(&train, &test),
    });
    Ok((model, test))
}

impl TrainedModel {
    /// The held-out half of `corpus` if the model was trained on a split of
    /// exactly this corpus.
    pub fn held_out(&self, corpus: &Corpus) -> Option<Corpus> {
        let t = self.training.as_ref()?;
        let (train, test) = split(corpus, t.train_fraction, t.seed).ok()?;
        (split_fingerprint(&train, &test) == t.fingerprint).then_some(test)
    }

    pub fn encoder(&self) -> Encoder<'_> {
        Encoder::new(&self.space, self.mode).expect("mode validated at training time")
    }

    pub fn p_fake(&self, x: &Inputs) -> f64 {
        match &self.body {
            ModelBody::Base { model } => model.p_fake(x),
            ModelBody::Stacked { model } => model.p_fake(x),
        }
    }

    pub fn predict_proba(&self, article: &NewsArticle) -> [f64; 2] {
        crate::classifiers::proba(self.p_fake(&self.encoder().article(article)))
    }

    pub fn predict_proba_batch(&self, articles: &[&NewsArticle]) -> Vec<[f64; 2]> {
        let encoder = self.encoder();
        articles
            .par_iter()
            .map(|a| crate::classifiers::proba(self.p_fake(&encoder.article(a))))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let env = Envelope {
            format_version: FORMAT_VERSION,
            model_kind: self.kind,
            feature_space: self.space.clone(),
            parameters: EnvelopeParameters {
                feature_mode: self.mode,
                body: self.body.clone(),
            },
            training: self.training.clone(),
        };
        serde_json::to_string(&env).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let env: Envelope = serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        if env.format_version != FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                env.format_version
            )));
        }
        let body_kind = match &env.parameters.body {
            ModelBody::Base { model } => Some(model.kind()),
            ModelBody::Stacked { .. } => None,
        };
        if body_kind.is_some_and(|k| k != env.model_kind) || (body_kind.is_none() != env.model_kind.is_ensemble()) {
            return Err(ModelError::Format(format!(
                "model_kind {} does not match its parameters",
                env.model_kind
            )));
        }
        env.feature_space.check_mode(env.parameters.feature_mode)?;
        Ok(TrainedModel {
            kind: env.model_kind,
            mode: env.parameters.feature_mode,
            space: env.feature_space,
            body: env.parameters.body,
            training: env.training,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io = |source| ModelError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(self.to_json().as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let io = |source| ModelError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut s = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path).map_err(io)?), &mut s).map_err(io)?;
        Self::from_json(&s)
    }
}

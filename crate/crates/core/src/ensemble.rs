//! Out-of-fold stacking: rank candidate learners by cross-validated macro-F1,
//! feed the top-k out-of-fold P(fake) columns to a GBDT meta-learner, and
//! refit the selected bases on the full training set.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{argmax_label, gbdt_fit, proba, GbdtConfig, GbdtModel, ProbClassifier, TrainError};
use crate::corpus::Label;
use crate::eval::macro_f1;
use crate::features::FeatureVector;
use crate::model::{Inputs, Learner, ProbModel};

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("invalid stacking config: {0}")]
    Config(String),
    #[error("cannot stratify into {n_folds} folds: class {label} has only {count} rows")]
    TooSmall { n_folds: usize, label: Label, count: usize },
    #[error("only {available} of the required {top_k} base models trained successfully")]
    TooFewModels { available: usize, top_k: usize },
    #[error("meta-learner failed: {0}")]
    Meta(TrainError),
    #[error("refitting {name} on the full training set failed: {source}")]
    Refit { name: String, source: TrainError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub top_k: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub meta: GbdtConfig,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            top_k: 3,
            n_folds: 5,
            seed: 0,
            meta: GbdtConfig::default(),
        }
    }
}

impl StackConfig {
    fn check(&self, n_candidates: usize) -> Result<(), EnsembleError> {
        if self.top_k == 0 || self.top_k > n_candidates {
            return Err(EnsembleError::Config(format!(
                "top_k {} must be in 1..={n_candidates}",
                self.top_k
            )));
        }
        if self.n_folds < 2 {
            return Err(EnsembleError::Config("n_folds must be at least 2".into()));
        }
        Ok(())
    }
}

/// Fold id per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[Label], n_folds: usize, seed: u64) -> Result<Vec<usize>, EnsembleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    for class in [Label::Real, Label::Fake] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < n_folds {
            return Err(EnsembleError::TooSmall {
                n_folds,
                label: class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % n_folds;
        }
    }
    Ok(folds)
}

/// Which rows trained the model that predicted which rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub trained_on: Vec<usize>,
    pub predicted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub name: String,
    /// Candidate position in the input list.
    pub candidate: usize,
    pub fold_macro_f1: Vec<f64>,
    pub mean_macro_f1: f64,
    /// Out-of-fold P(fake) for every row.
    pub oof: Vec<f64>,
}

fn fold_rows(folds: &[usize], n_folds: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..n_folds)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
            (kept, held)
        })
        .collect()
}

/// Cross-validates every candidate on shared folds. Failed candidates come
/// back as `Err` in their slot.
pub fn cross_validate<L: Learner>(
    candidates: &[L],
    data: &[Inputs],
    labels: &[Label],
    folds: &[usize],
    n_folds: usize,
) -> (Vec<Result<CvOutcome, TrainError>>, Vec<FoldRecord>) {
    let splits = fold_rows(folds, n_folds);
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..n_folds).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<Vec<f64>, TrainError>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (train_rows, held) = &splits[f];
            let model = candidates[c].fit(data, labels, train_rows)?;
            Ok(held.iter().map(|&i| model.p_fake(&data[i])).collect())
        })
        .collect();
    let records = splits
        .iter()
        .enumerate()
        .map(|(f, (kept, held))| FoldRecord {
            fold: f,
            trained_on: kept.clone(),
            predicted: held.clone(),
        })
        .collect();

    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut results = results.into_iter();
    for (c, cand) in candidates.iter().enumerate() {
        let per_fold: Vec<Result<Vec<f64>, TrainError>> = results.by_ref().take(n_folds).collect();
        let mut oof = vec![f64::NAN; data.len()];
        let mut fold_f1 = Vec::with_capacity(n_folds);
        let mut failure = None;
        for (f, r) in per_fold.into_iter().enumerate() {
            match r {
                Ok(p) => {
                    let held = &splits[f].1;
                    for (&i, &v) in held.iter().zip(&p) {
                        oof[i] = v;
                    }
                    let pred: Vec<Label> = p.iter().map(|&v| argmax_label(proba(v))).collect();
                    let gold: Vec<Label> = held.iter().map(|&i| labels[i]).collect();
                    fold_f1.push(macro_f1(&pred, &gold));
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        outcomes.push(match failure {
            Some(e) => Err(e),
            None => Ok(CvOutcome {
                name: cand.name(),
                candidate: c,
                mean_macro_f1: fold_f1.iter().sum::<f64>() / n_folds as f64,
                fold_macro_f1: fold_f1,
                oof,
            }),
        });
    }
    (outcomes, records)
}

/// Successful candidates by descending mean fold macro-F1; ties keep the
/// candidate order.
pub fn rank_outcomes(outcomes: Vec<Result<CvOutcome, TrainError>>, names: &[String]) -> Vec<CvOutcome> {
    let mut ok: Vec<CvOutcome> = Vec::new();
    for (name, r) in names.iter().zip(outcomes) {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => warn!("excluding {name} from stacking: {e}"),
        }
    }
    ok.sort_by(|a, b| b.mean_macro_f1.total_cmp(&a.mean_macro_f1).then(a.candidate.cmp(&b.candidate)));
    ok
}

pub fn rank_base_models<L: Learner>(
    candidates: &[L],
    data: &[Inputs],
    labels: &[Label],
    config: &StackConfig,
) -> Result<Vec<CvOutcome>, EnsembleError> {
    config.check(candidates.len())?;
    let folds = stratified_folds(labels, config.n_folds, config.seed)?;
    let (outcomes, _) = cross_validate(candidates, data, labels, &folds, config.n_folds);
    let names: Vec<String> = candidates.iter().map(|c| c.name()).collect();
    let ranked = rank_outcomes(outcomes, &names);
    if ranked.len() < config.top_k {
        return Err(EnsembleError::TooFewModels {
            available: ranked.len(),
            top_k: config.top_k,
        });
    }
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaMatrix {
    /// `n_train x k`; column `j` is P(fake) from `columns[j]`.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub columns: Vec<String>,
    pub folds: Vec<usize>,
    pub provenance: Vec<FoldRecord>,
}

impl MetaMatrix {
    fn from_outcomes(selected: &[&CvOutcome], labels: &[Label], folds: Vec<usize>, provenance: Vec<FoldRecord>) -> Self {
        let rows = (0..labels.len())
            .map(|i| selected.iter().map(|o| o.oof[i]).collect())
            .collect();
        MetaMatrix {
            rows,
            labels: labels.to_vec(),
            columns: selected.iter().map(|o| o.name.clone()).collect(),
            folds,
            provenance,
        }
    }

    pub fn feature_rows(&self) -> Vec<FeatureVector> {
        self.rows.iter().map(|r| FeatureVector::from_dense(r)).collect()
    }
}

/// Out-of-fold predictions of `selected` (already in rank order).
pub fn build_meta_matrix<L: Learner>(
    selected: &[L],
    data: &[Inputs],
    labels: &[Label],
    config: &StackConfig,
) -> Result<MetaMatrix, EnsembleError> {
    if config.n_folds < 2 {
        return Err(EnsembleError::Config("n_folds must be at least 2".into()));
    }
    let folds = stratified_folds(labels, config.n_folds, config.seed)?;
    let (outcomes, provenance) = cross_validate(selected, data, labels, &folds, config.n_folds);
    let mut ok = Vec::new();
    for (cand, r) in selected.iter().zip(outcomes) {
        ok.push(r.map_err(|source| EnsembleError::Refit {
            name: cand.name(),
            source,
        })?);
    }
    let refs: Vec<&CvOutcome> = ok.iter().collect();
    Ok(MetaMatrix::from_outcomes(&refs, labels, folds, provenance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub name: String,
    pub cv_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel<M> {
    /// Selected base names in meta-column order.
    pub selected: Vec<String>,
    /// Every successfully cross-validated candidate, best first.
    pub ranking: Vec<RankEntry>,
    pub bases: Vec<M>,
    pub meta: GbdtModel,
}

impl<M: ProbModel> StackedModel<M> {
    pub fn meta_features(&self, x: &Inputs) -> Vec<f64> {
        self.bases.iter().map(|b| b.p_fake(x)).collect()
    }

    pub fn predict_proba(&self, x: &Inputs) -> [f64; 2] {
        self.meta.predict_proba(&FeatureVector::from_dense(&self.meta_features(x)))
    }
}

impl<M: ProbModel> ProbModel for StackedModel<M> {
    fn p_fake(&self, x: &Inputs) -> f64 {
        self.predict_proba(x)[1]
    }
}

pub fn stack_predict_proba<M: ProbModel>(model: &StackedModel<M>, x: &Inputs) -> [f64; 2] {
    model.predict_proba(x)
}

/// Ranks candidates, fits the meta GBDT on the top-k out-of-fold columns
/// (the ranking's own CV predictions, so no extra folds are trained) and
/// refits the selected bases on every row.
pub fn stack_fit<L: Learner>(
    candidates: &[L],
    data: &[Inputs],
    labels: &[Label],
    config: &StackConfig,
) -> Result<StackedModel<L::Model>, EnsembleError> {
    config.check(candidates.len())?;
    let folds = stratified_folds(labels, config.n_folds, config.seed)?;
    let (outcomes, provenance) = cross_validate(candidates, data, labels, &folds, config.n_folds);
    let names: Vec<String> = candidates.iter().map(|c| c.name()).collect();
    let ranked = rank_outcomes(outcomes, &names);
    if ranked.len() < config.top_k {
        return Err(EnsembleError::TooFewModels {
            available: ranked.len(),
            top_k: config.top_k,
        });
    }
    let selected: Vec<&CvOutcome> = ranked.iter().take(config.top_k).collect();
    for o in &ranked {
        info!("stacking candidate {}: cv macro-F1 {:.4}", o.name, o.mean_macro_f1);
    }
    let matrix = MetaMatrix::from_outcomes(&selected, labels, folds, provenance);
    let meta = gbdt_fit(&matrix.feature_rows(), labels, &config.meta).map_err(EnsembleError::Meta)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let bases = selected
        .par_iter()
        .map(|o| {
            candidates[o.candidate]
                .fit(data, labels, &all)
                .map_err(|source| EnsembleError::Refit {
                    name: o.name.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StackedModel {
        selected: matrix.columns,
        ranking: ranked
            .iter()
            .map(|o| RankEntry {
                name: o.name.clone(),
                cv_macro_f1: o.mean_macro_f1,
            })
            .collect(),
        bases,
        meta,
    })
}

//! From-scratch classical learners over sparse feature vectors.
//!
//! Every model exposes class probabilities `[p_real, p_fake]` through
//! [`ProbClassifier`]; `predict` is the argmax with ties going to
//! [`Label::Real`].

mod forest;
mod gbdt;
mod linear;
mod naive_bayes;
mod tree;

pub use forest::{forest_fit, ForestConfig, ForestModel};
pub use gbdt::{gbdt_fit, gbdt_fit_traced, log_loss, GbdtConfig, GbdtModel};
pub use linear::{
    logreg_fit, logreg_loss_and_grad, svm_fit, LinearModel, LogRegConfig, LogisticRegression,
    Platt, SvmConfig, SvmModel,
};
pub use naive_bayes::{gaussian_fit, hybrid_nb_fit, nb_fit, GaussianBlock, HybridNb, NaiveBayes};
pub use tree::{tree_fit, tree_fit_weighted, DecisionTree, SplitCriterion, TreeConfig, TreeNode};

use thiserror::Error;

use crate::corpus::Label;
use crate::features::FeatureVector;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
}

pub trait ProbClassifier {
    /// `[p_real, p_fake]`, each in `[0, 1]`, summing to 1.
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2];

    fn predict(&self, row: &FeatureVector) -> Label {
        argmax_label(self.predict_proba(row))
    }
}

impl<T: ProbClassifier + ?Sized> ProbClassifier for Box<T> {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        (**self).predict_proba(row)
    }
}

pub fn argmax_label(p: [f64; 2]) -> Label {
    if p[1] > p[0] {
        Label::Fake
    } else {
        Label::Real
    }
}

pub fn proba(p_fake: f64) -> [f64; 2] {
    let p = p_fake.clamp(0.0, 1.0);
    [1.0 - p, p]
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_training_set(rows: &[FeatureVector], labels: &[Label]) -> Result<(), TrainError> {
    if rows.is_empty() {
        return Err(TrainError::Input("no training rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(TrainError::Input(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let dim = rows[0].dimension();
    if rows.iter().any(|r| r.dimension() != dim) {
        return Err(TrainError::Input("rows have differing dimensions".into()));
    }
    Ok(())
}

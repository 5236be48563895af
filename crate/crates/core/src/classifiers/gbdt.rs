//! First-order gradient boosting with logistic loss: every round fits a
//! regression tree to the residuals `y - p` and leaves hold mean residuals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Columns};
use super::{check_training_set, sigmoid, ProbClassifier, SplitCriterion, TrainError, TreeConfig, TreeNode};
use crate::corpus::Label;
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub initial_log_odds: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
}

impl GbdtModel {
    pub fn score(&self, row: &FeatureVector) -> f64 {
        self.initial_log_odds + self.learning_rate * self.trees.iter().map(|t| t.evaluate(row)).sum::<f64>()
    }
}

impl ProbClassifier for GbdtModel {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        let p = sigmoid(self.score(row));
        [1.0 - p, p]
    }
}

/// Keeps a single-class prior's log-odds finite.
const PRIOR_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy of `p_fake` against `labels`.
pub fn log_loss(labels: &[Label], p_fake: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(p_fake)
        .map(|(l, p)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            if *l == Label::Fake {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len().max(1) as f64
}

pub fn gbdt_fit(rows: &[FeatureVector], labels: &[Label], config: &GbdtConfig) -> Result<GbdtModel, TrainError> {
    gbdt_fit_traced(rows, labels, config).map(|(m, _)| m)
}

/// Like [`gbdt_fit`], also returning the training log loss before the first
/// round and after every round.
pub fn gbdt_fit_traced(
    rows: &[FeatureVector],
    labels: &[Label],
    config: &GbdtConfig,
) -> Result<(GbdtModel, Vec<f64>), TrainError> {
    check_training_set(rows, labels)?;
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(TrainError::Config("learning_rate must be positive".into()));
    }
    let n = rows.len();
    let y: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let prior = (y.iter().sum::<f64>() / n as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let initial_log_odds = (prior / (1.0 - prior)).ln();
    let mut model = GbdtModel {
        initial_log_odds,
        learning_rate: config.learning_rate,
        trees: Vec::new(),
    };
    let mut scores = vec![initial_log_odds; n];
    let loss_of = |scores: &[f64]| {
        let p: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        log_loss(labels, &p)
    };
    let mut trace = vec![loss_of(&scores)];
    let single_class = y.iter().all(|&v| v == y[0]);
    if single_class {
        return Ok((model, trace));
    }
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_features: None,
        criterion: SplitCriterion::Variance,
        seed: 0,
    };
    let columns = Columns::new(rows);
    let weights = vec![1.0; n];
    // no sampling happens without max_features; the rng is never drawn
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for round in 0..config.n_rounds {
        let residuals: Vec<f64> = y.iter().zip(&scores).map(|(yi, s)| yi - sigmoid(*s)).collect();
        let tree = grow(&columns, rows, &residuals, &weights, &tree_config, &mut rng);
        for (s, row) in scores.iter_mut().zip(rows) {
            *s += config.learning_rate * tree.evaluate(row);
        }
        let loss = loss_of(&scores);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step: round, loss });
        }
        trace.push(loss);
        model.trees.push(tree);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::testutil::{accuracy, assert_valid_proba, xor};
    use rand::Rng;

    #[test]
    fn balanced_prior_is_zero() {
        let (rows, labels) = xor();
        let cfg = GbdtConfig {
            n_rounds: 0,
            ..Default::default()
        };
        let m = gbdt_fit(&rows, &labels, &cfg).unwrap();
        assert_eq!(m.initial_log_odds, 0.0);
        assert!(m.trees.is_empty());
        assert_eq!(m.predict_proba(&rows[0]), [0.5, 0.5]);
    }

    #[test]
    fn no_rounds_predicts_prior() {
        let rows: Vec<FeatureVector> = (0..4).map(|i| FeatureVector::from_dense(&[i as f64])).collect();
        let labels = [Label::Fake, Label::Fake, Label::Fake, Label::Real];
        let cfg = GbdtConfig {
            n_rounds: 0,
            ..Default::default()
        };
        let m = gbdt_fit(&rows, &labels, &cfg).unwrap();
        assert!((m.predict_proba(&rows[3])[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_class_degenerates_to_prior() {
        let rows: Vec<FeatureVector> = (0..3).map(|i| FeatureVector::from_dense(&[i as f64])).collect();
        let m = gbdt_fit(&rows, &[Label::Real; 3], &GbdtConfig::default()).unwrap();
        assert!(m.trees.is_empty());
        let p = m.predict_proba(&rows[0]);
        assert_valid_proba(p);
        assert!(p[1] > 0.0 && p[1] < 1e-9);
    }

    #[test]
    fn xor_is_learned() {
        let (rows, labels) = xor();
        let cfg = GbdtConfig {
            n_rounds: 50,
            learning_rate: 0.3,
            max_depth: 2,
            ..Default::default()
        };
        let m = gbdt_fit(&rows, &labels, &cfg).unwrap();
        assert_eq!(accuracy(&m, &rows, &labels), 1.0);
    }

    #[test]
    fn training_loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<FeatureVector> = (0..80)
            .map(|_| FeatureVector::from_dense(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0]))
            .collect();
        let labels: Vec<Label> = rows
            .iter()
            .map(|r| Label::from_index((r.get(0) * r.get(1) + rng.random_range(-0.2..0.2) > 0.0) as usize))
            .collect();
        let (_, trace) = gbdt_fit_traced(&rows, &labels, &GbdtConfig::default()).unwrap();
        assert_eq!(trace.len(), 201);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(trace[200] < trace[0]);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Columns};
use super::{check_training_set, proba, ProbClassifier, SplitCriterion, TrainError, TreeConfig, TreeNode};
use crate::corpus::Label;
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 1,
            bootstrap: true,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
}

impl ProbClassifier for ForestModel {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        let total: f64 = self.trees.iter().map(|t| t.evaluate(row)).sum();
        proba(total / self.trees.len() as f64)
    }
}

/// Each tree draws from its own ChaCha stream, so the result does not depend
/// on how rayon schedules the trees.
pub fn forest_fit(rows: &[FeatureVector], labels: &[Label], config: &ForestConfig) -> Result<ForestModel, TrainError> {
    check_training_set(rows, labels)?;
    if config.n_trees == 0 {
        return Err(TrainError::Config("n_trees must be at least 1".into()));
    }
    let n = rows.len();
    let dim = rows[0].dimension();
    let max_features = config
        .max_features
        .unwrap_or_else(|| ((dim as f64).sqrt().floor() as usize).max(1));
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_features: Some(max_features),
        criterion: SplitCriterion::Gini,
        seed: config.seed,
    };
    let targets: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let columns = Columns::new(rows);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let mut weights = vec![0.0; n];
            if config.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1.0;
                }
            } else {
                weights.iter_mut().for_each(|w| *w = 1.0);
            }
            grow(&columns, rows, &targets, &weights, &tree_config, &mut rng)
        })
        .collect();
    Ok(ForestModel { trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::testutil::{accuracy, xor};
    use crate::classifiers::tree_fit;

    #[test]
    fn single_unbootstrapped_tree_equals_cart() {
        let (rows, labels) = xor();
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(2),
            max_depth: 3,
            ..Default::default()
        };
        let f = forest_fit(&rows, &labels, &cfg).unwrap();
        let tree_cfg = TreeConfig {
            max_depth: 3,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let t = tree_fit(&rows, &labels, &tree_cfg).unwrap();
        assert_eq!(f.trees[0], t.root);
    }

    #[test]
    fn xor_is_learned() {
        let (rows, labels) = xor();
        let cfg = ForestConfig {
            n_trees: 50,
            max_depth: 2,
            ..Default::default()
        };
        let f = forest_fit(&rows, &labels, &cfg).unwrap();
        assert_eq!(accuracy(&f, &rows, &labels), 1.0);
    }

    #[test]
    fn same_seed_same_forest() {
        let (rows, labels) = xor();
        let cfg = ForestConfig {
            n_trees: 10,
            seed: 3,
            ..Default::default()
        };
        assert_eq!(forest_fit(&rows, &labels, &cfg).unwrap(), forest_fit(&rows, &labels, &cfg).unwrap());
    }

    #[test]
    fn zero_trees_rejected() {
        let (rows, labels) = xor();
        let cfg = ForestConfig {
            n_trees: 0,
            ..Default::default()
        };
        assert!(forest_fit(&rows, &labels, &cfg).is_err());
    }
}

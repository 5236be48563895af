use serde::{Deserialize, Serialize};

use super::{check_training_set, ProbClassifier, TrainError};
use crate::corpus::Label;
use crate::features::FeatureVector;

/// Multinomial Naive Bayes over raw term counts with additive smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub alpha: f64,
    pub log_prior: [f64; 2],
    /// `log_likelihood[c][t] = ln((count(t, c) + alpha) / (total(c) + alpha * V))`
    pub log_likelihood: [Vec<f64>; 2],
}

pub fn nb_fit(rows: &[FeatureVector], labels: &[Label], alpha: f64) -> Result<NaiveBayes, TrainError> {
    check_training_set(rows, labels)?;
    if !(alpha > 0.0) {
        return Err(TrainError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let dim = rows[0].dimension();
    let mut counts = [vec![0.0; dim], vec![0.0; dim]];
    let mut class_n = [0usize; 2];
    for (row, label) in rows.iter().zip(labels) {
        let c = label.index();
        class_n[c] += 1;
        for (i, v) in row.iter() {
            if v < 0.0 || !v.is_finite() {
                return Err(TrainError::Input(format!(
                    "multinomial NB needs non-negative counts, feature {i} = {v}"
                )));
            }
            counts[c][i] += v;
        }
    }
    let n = rows.len() as f64;
    let log_prior = [
        (class_n[0] as f64 / n).ln(),
        (class_n[1] as f64 / n).ln(),
    ];
    let log_likelihood = counts.map(|cnt| {
        let denom = cnt.iter().sum::<f64>() + alpha * dim as f64;
        cnt.iter().map(|c| ((c + alpha) / denom).ln()).collect()
    });
    Ok(NaiveBayes {
        alpha,
        log_prior,
        log_likelihood,
    })
}

impl NaiveBayes {
    pub fn log_joint(&self, row: &FeatureVector) -> [f64; 2] {
        let mut out = self.log_prior;
        for (c, o) in out.iter_mut().enumerate() {
            *o += row
                .iter()
                .map(|(i, v)| v * self.log_likelihood[c][i])
                .sum::<f64>();
        }
        out
    }
}

impl ProbClassifier for NaiveBayes {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        let [a, b] = self.log_joint(row);
        // an unseen class has -inf prior
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            return [0.5, 0.5];
        }
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let p_fake = eb / (ea + eb);
        [1.0 - p_fake, p_fake]
    }
}

/// Per-class independent Gaussians over dense real-valued features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlock {
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

/// Variances are inflated by `1e-9` times the largest feature variance (and
/// floored at `1e-9`) so constant features stay finite.
pub fn gaussian_fit(rows: &[Vec<f64>], labels: &[Label]) -> Result<GaussianBlock, TrainError> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(TrainError::Input(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::Input("gaussian block needs finite rows of equal length".into()));
    }
    let mut n = [0.0f64; 2];
    let mut sum = [vec![0.0; dim], vec![0.0; dim]];
    for (r, l) in rows.iter().zip(labels) {
        let c = l.index();
        n[c] += 1.0;
        for (s, v) in sum[c].iter_mut().zip(r) {
            *s += v;
        }
    }
    let mean = [0, 1].map(|c| sum[c].iter().map(|s| if n[c] > 0.0 { s / n[c] } else { 0.0 }).collect::<Vec<f64>>());
    let mut sq = [vec![0.0; dim], vec![0.0; dim]];
    for (r, l) in rows.iter().zip(labels) {
        let c = l.index();
        for ((q, v), m) in sq[c].iter_mut().zip(r).zip(&mean[c]) {
            *q += (v - m).powi(2);
        }
    }
    let var: [Vec<f64>; 2] = [0, 1].map(|c| sq[c].iter().map(|q| if n[c] > 0.0 { q / n[c] } else { 0.0 }).collect());
    let spread = var.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let eps = (1e-9 * spread).max(1e-9);
    let var = var.map(|v| v.into_iter().map(|x| x + eps).collect());
    Ok(GaussianBlock { mean, var })
}

impl GaussianBlock {
    pub fn log_likelihood(&self, x: &[f64]) -> [f64; 2] {
        [0, 1].map(|c| {
            x.iter()
                .zip(&self.mean[c])
                .zip(&self.var[c])
                .map(|((v, m), s2)| -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (v - m).powi(2) / s2))
                .sum()
        })
    }
}

/// Naive Bayes over whichever blocks the feature mode provides: multinomial
/// term counts for content and class-conditional Gaussians for the social
/// block. Both share one class prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNb {
    pub log_prior: [f64; 2],
    pub text: Option<NaiveBayes>,
    pub social: Option<GaussianBlock>,
}

pub fn hybrid_nb_fit(
    counts: Option<&[FeatureVector]>,
    social: Option<&[Vec<f64>]>,
    labels: &[Label],
    alpha: f64,
) -> Result<HybridNb, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::Input("no training rows".into()));
    }
    if counts.is_none() && social.is_none() {
        return Err(TrainError::Config("naive Bayes needs at least one feature block".into()));
    }
    let text = counts.map(|c| nb_fit(c, labels, alpha)).transpose()?;
    let social = social.map(|s| gaussian_fit(s, labels)).transpose()?;
    let n = labels.len() as f64;
    let fake = labels.iter().filter(|l| **l == Label::Fake).count() as f64;
    Ok(HybridNb {
        log_prior: [((n - fake) / n).ln(), (fake / n).ln()],
        text,
        social,
    })
}

impl HybridNb {
    pub fn predict_proba(&self, counts: &FeatureVector, social: &[f64]) -> [f64; 2] {
        let mut joint = self.log_prior;
        if let Some(t) = &self.text {
            let lj = t.log_joint(counts);
            for c in 0..2 {
                joint[c] += lj[c] - t.log_prior[c];
            }
        }
        if let Some(g) = &self.social {
            let ll = g.log_likelihood(social);
            for c in 0..2 {
                joint[c] += ll[c];
            }
        }
        let [a, b] = joint;
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            return [0.5, 0.5];
        }
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let p_fake = eb / (ea + eb);
        [1.0 - p_fake, p_fake]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::testutil::assert_valid_proba;
    use proptest::prelude::*;

    fn symmetric_model() -> NaiveBayes {
        // class-real counts [2, 0], class-fake counts [0, 2], one row each
        let rows = vec![FeatureVector::from_dense(&[2.0, 0.0]), FeatureVector::from_dense(&[0.0, 2.0])];
        nb_fit(&rows, &[Label::Real, Label::Fake], 1.0).unwrap()
    }

    #[test]
    fn worked_posterior() {
        let m = symmetric_model();
        let p = m.predict_proba(&FeatureVector::from_dense(&[1.0, 0.0]));
        assert!((p[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn symmetric_doc_is_even() {
        let m = symmetric_model();
        let p = m.predict_proba(&FeatureVector::from_dense(&[1.0, 1.0]));
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_doc_returns_priors() {
        let rows = vec![
            FeatureVector::from_dense(&[1.0, 0.0]),
            FeatureVector::from_dense(&[1.0, 0.0]),
            FeatureVector::from_dense(&[0.0, 3.0]),
        ];
        let m = nb_fit(&rows, &[Label::Real, Label::Real, Label::Fake], 1.0).unwrap();
        let p = m.predict_proba(&FeatureVector::zeros(2));
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn negative_counts_rejected() {
        let rows = vec![FeatureVector::from_dense(&[-1.0, 0.0])];
        assert!(matches!(nb_fit(&rows, &[Label::Real], 1.0), Err(TrainError::Input(_))));
    }

    #[test]
    fn gaussian_block_matches_closed_form() {
        // class 0: {0, 2} -> mean 1, var 1; class 1: {4, 6} -> mean 5, var 1
        let rows = vec![vec![0.0], vec![2.0], vec![4.0], vec![6.0]];
        let y = [Label::Real, Label::Real, Label::Fake, Label::Fake];
        let h = hybrid_nb_fit(None, Some(&rows), &y, 1.0).unwrap();
        let p = h.predict_proba(&FeatureVector::zeros(0), &[3.0]);
        assert!((p[1] - 0.5).abs() < 1e-9);
        // log-odds at x = 4 is ((4-1)^2 - (4-5)^2) / 2 = 4 (variance 1 + 6e-9)
        let p = h.predict_proba(&FeatureVector::zeros(0), &[4.0]);
        assert!((p[1] - 0.9820137900379085).abs() < 1e-7, "{p:?}");
    }

    #[test]
    fn text_only_hybrid_equals_multinomial() {
        let rows = vec![
            FeatureVector::from_dense(&[2.0, 0.0, 1.0]),
            FeatureVector::from_dense(&[0.0, 3.0, 1.0]),
            FeatureVector::from_dense(&[1.0, 1.0, 0.0]),
        ];
        let y = [Label::Real, Label::Fake, Label::Fake];
        let plain = nb_fit(&rows, &y, 0.5).unwrap();
        let h = hybrid_nb_fit(Some(&rows), None, &y, 0.5).unwrap();
        let d = FeatureVector::from_dense(&[1.0, 0.0, 2.0]);
        let (a, b) = (plain.predict_proba(&d), h.predict_proba(&d, &[]));
        assert!((a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn blocks_add_in_log_space() {
        let counts: Vec<FeatureVector> = [[1.0, 0.0], [2.0, 1.0], [0.0, 1.0], [1.0, 3.0]]
            .iter()
            .map(|r| FeatureVector::from_dense(r))
            .collect();
        let social = vec![vec![-1.5], vec![-0.5], vec![0.5], vec![1.5]];
        let y = [Label::Real, Label::Real, Label::Fake, Label::Fake];
        let t = hybrid_nb_fit(Some(&counts), None, &y, 1.0).unwrap();
        let s = hybrid_nb_fit(None, Some(&social), &y, 1.0).unwrap();
        let both = hybrid_nb_fit(Some(&counts), Some(&social), &y, 1.0).unwrap();
        let logit = |p: [f64; 2]| (p[1] / p[0]).ln();
        let d = FeatureVector::from_dense(&[2.0, 1.0]);
        let x = [0.3];
        let sum = logit(t.predict_proba(&d, &x)) + logit(s.predict_proba(&d, &x));
        assert!((logit(both.predict_proba(&d, &x)) - sum).abs() < 1e-6);
    }

    /// Direct product-form Bayes rule, no logs.
    fn brute_force(rows: &[Vec<u32>], labels: &[usize], doc: &[u32]) -> f64 {
        let v = doc.len();
        let mut joint = [0.0f64; 2];
        for c in 0..2 {
            let members: Vec<&Vec<u32>> =
                rows.iter().zip(labels).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
            let prior = members.len() as f64 / rows.len() as f64;
            let total: u32 = members.iter().map(|r| r.iter().sum::<u32>()).sum();
            let mut p = prior;
            for t in 0..v {
                let ct: u32 = members.iter().map(|r| r[t]).sum();
                let pt = (ct as f64 + 1.0) / (total as f64 + v as f64);
                for _ in 0..doc[t] {
                    p *= pt;
                }
            }
            joint[c] = p;
        }
        joint[1] / (joint[0] + joint[1])
    }

    proptest! {
        #[test]
        fn matches_brute_force_bayes(
            v in 1usize..=5,
            data in prop::collection::vec((prop::collection::vec(0u32..=3, 5), 0usize..2), 2..12),
            doc in prop::collection::vec(0u32..=3, 5),
        ) {
            let rows: Vec<Vec<u32>> = data.iter().map(|(r, _)| r[..v].to_vec()).collect();
            let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let doc = &doc[..v];
            let fv: Vec<FeatureVector> = rows
                .iter()
                .map(|r| FeatureVector::from_dense(&r.iter().map(|&x| x as f64).collect::<Vec<_>>()))
                .collect();
            let ls: Vec<Label> = labels.iter().map(|&l| Label::from_index(l)).collect();
            let m = nb_fit(&fv, &ls, 1.0).unwrap();
            let d = FeatureVector::from_dense(&doc.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let p = m.predict_proba(&d);
            assert_valid_proba(p);
            prop_assert!((p[1] - brute_force(&rows, &labels, doc)).abs() < 1e-9);
        }
    }
}

//! Linear models trained by stochastic gradient descent: L2-regularized
//! logistic regression and a hinge-loss linear SVM with Platt calibration.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, sigmoid, ProbClassifier, TrainError};
use crate::corpus::Label;
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn margin(&self, row: &FeatureVector) -> f64 {
        row.iter()
            .filter(|(i, _)| *i < self.weights.len())
            .map(|(i, v)| v * self.weights[i])
            .sum::<f64>()
            + self.bias
    }
}

/// `w = scale * v`, so the L2 shrink of every SGD step is O(1).
struct ScaledWeights {
    v: Vec<f64>,
    scale: f64,
    bias: f64,
}

impl ScaledWeights {
    fn new(dim: usize) -> Self {
        ScaledWeights {
            v: vec![0.0; dim],
            scale: 1.0,
            bias: 0.0,
        }
    }

    fn margin(&self, row: &FeatureVector) -> f64 {
        self.scale * row.dot(&self.v) + self.bias
    }

    fn shrink(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale < 1e-9 {
            let s = self.scale;
            self.v.iter_mut().for_each(|x| *x *= s);
            self.scale = 1.0;
        }
    }

    /// `w += coef * row`
    fn add(&mut self, row: &FeatureVector, coef: f64) {
        let c = coef / self.scale;
        for (i, x) in row.iter() {
            self.v[i] += c * x;
        }
    }

    fn norm_sq(&self) -> f64 {
        self.scale * self.scale * self.v.iter().map(|x| x * x).sum::<f64>()
    }

    fn into_model(self) -> LinearModel {
        let s = self.scale;
        LinearModel {
            weights: self.v.into_iter().map(|x| x * s).collect(),
            bias: self.bias,
        }
    }
}

fn row_log_loss(margin: f64, y: f64) -> f64 {
    // ln(1 + e^m) - y m, computed stably
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - y * margin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            learning_rate: 0.1,
            l2: 1e-4,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub model: LinearModel,
}

impl ProbClassifier for LogisticRegression {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        let p = sigmoid(self.model.margin(row));
        [1.0 - p, p]
    }
}

/// Mean log loss plus `l2 / 2 * |w|^2`, with its gradient in `w` and `b`.
pub fn logreg_loss_and_grad(
    model: &LinearModel,
    rows: &[FeatureVector],
    labels: &[Label],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut grad: Vec<f64> = model.weights.iter().map(|w| l2 * w).collect();
    let mut grad_b = 0.0;
    let mut loss = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    for (row, label) in rows.iter().zip(labels) {
        let m = model.margin(row);
        let y = label.as_f64();
        loss += row_log_loss(m, y) / n;
        let g = (sigmoid(m) - y) / n;
        for (i, x) in row.iter() {
            grad[i] += g * x;
        }
        grad_b += g;
    }
    (loss, grad, grad_b)
}

pub fn logreg_fit(
    rows: &[FeatureVector],
    labels: &[Label],
    config: &LogRegConfig,
) -> Result<LogisticRegression, TrainError> {
    check_training_set(rows, labels)?;
    if config.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut w = ScaledWeights::new(rows[0].dimension());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let lr = config.learning_rate;
    let mut step = 0;
    let mut coefs = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let bn = batch.len() as f64;
            coefs.clear();
            let mut data_loss = 0.0;
            for &i in batch {
                let m = w.margin(&rows[i]);
                let y = labels[i].as_f64();
                data_loss += row_log_loss(m, y) / bn;
                coefs.push((sigmoid(m) - y) / bn);
            }
            let loss = data_loss + 0.5 * config.l2 * w.norm_sq();
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { step, loss });
            }
            w.shrink(1.0 - lr * config.l2);
            for (&i, &g) in batch.iter().zip(&coefs) {
                w.add(&rows[i], -lr * g);
                w.bias -= lr * g;
            }
            step += 1;
        }
    }
    Ok(LogisticRegression {
        model: w.into_model(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    /// Share of training rows held out for Platt calibration.
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            learning_rate: 0.05,
            l2: 1e-4,
            epochs: 50,
            calibration_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Probability map from SVM margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Platt {
    /// `p_fake = sigmoid(a * margin + b)`
    Fitted { a: f64, b: f64 },
    /// `p_fake = sigmoid(clamp(margin, -clip, clip))`
    Fallback { clip: f64 },
}

const MARGIN_CLIP: f64 = 20.0;

impl Platt {
    pub fn p_fake(&self, margin: f64) -> f64 {
        match *self {
            Platt::Fitted { a, b } => sigmoid(a * margin + b),
            Platt::Fallback { clip } => sigmoid(margin.clamp(-clip, clip)),
        }
    }

    /// Platt's method with smoothed targets, solved by damped Newton steps
    /// (Lin, Lin & Weng formulation). `None` when only one class is present.
    pub fn fit(margins: &[f64], positive: &[bool]) -> Option<Platt> {
        let n1 = positive.iter().filter(|p| **p).count() as f64;
        let n0 = positive.len() as f64 - n1;
        if n1 == 0.0 || n0 == 0.0 {
            return None;
        }
        let hi = (n1 + 1.0) / (n1 + 2.0);
        let lo = 1.0 / (n0 + 2.0);
        let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
        // Internal convention p = 1 / (1 + exp(A f + B)).
        let objective = |a: f64, b: f64| -> f64 {
            margins
                .iter()
                .zip(&t)
                .map(|(f, ti)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        ti * z + (-z).exp().ln_1p()
                    } else {
                        (ti - 1.0) * z + z.exp().ln_1p()
                    }
                })
                .sum()
        };
        let (mut a, mut b) = (0.0, ((n0 + 1.0) / (n1 + 1.0)).ln());
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (f, ti) in margins.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        Some(Platt::Fitted { a: -a, b: -b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub model: LinearModel,
    pub platt: Platt,
}

impl SvmModel {
    pub fn decision(&self, row: &FeatureVector) -> f64 {
        self.model.margin(row)
    }
}

impl ProbClassifier for SvmModel {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        let p = self.platt.p_fake(self.decision(row));
        [1.0 - p, p]
    }
}

fn hinge_sgd(rows: &[FeatureVector], labels: &[Label], idx: &[usize], config: &SvmConfig) -> Result<LinearModel, TrainError> {
    let mut w = ScaledWeights::new(rows[0].dimension());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = idx.to_vec();
    let lr = config.learning_rate;
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let y = if labels[i] == Label::Fake { 1.0 } else { -1.0 };
            let m = w.margin(&rows[i]);
            epoch_loss += (1.0 - y * m).max(0.0);
            w.shrink(1.0 - lr * config.l2);
            if y * m < 1.0 {
                w.add(&rows[i], lr * y);
                w.bias += lr * y;
            }
            step += 1;
        }
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                loss: epoch_loss,
            });
        }
    }
    Ok(w.into_model())
}

/// Stratified calibration hold-out; `None` if a side would lack a class pair.
fn calibration_split(labels: &[Label], fraction: f64, seed: u64) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let (mut fit, mut cal) = (Vec::new(), Vec::new());
    for class in [Label::Real, Label::Fake] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let k = (fraction * members.len() as f64).round() as usize;
        if k < 2 || members.len() - k < 2 {
            return None;
        }
        members.shuffle(&mut rng);
        cal.extend_from_slice(&members[..k]);
        fit.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    cal.sort_unstable();
    Some((fit, cal))
}

pub fn svm_fit(rows: &[FeatureVector], labels: &[Label], config: &SvmConfig) -> Result<SvmModel, TrainError> {
    check_training_set(rows, labels)?;
    match calibration_split(labels, config.calibration_fraction, config.seed) {
        Some((fit_idx, cal_idx)) => {
            let model = hinge_sgd(rows, labels, &fit_idx, config)?;
            let margins: Vec<f64> = cal_idx.iter().map(|&i| model.margin(&rows[i])).collect();
            let positive: Vec<bool> = cal_idx.iter().map(|&i| labels[i] == Label::Fake).collect();
            let platt = Platt::fit(&margins, &positive).unwrap_or_else(|| {
                warn!("degenerate Platt calibration; using clipped sigmoid of the margin");
                Platt::Fallback { clip: MARGIN_CLIP }
            });
            Ok(SvmModel { model, platt })
        }
        None => {
            warn!(
                "{} rows are too few for a calibration split; using clipped sigmoid of the margin",
                rows.len()
            );
            let all: Vec<usize> = (0..rows.len()).collect();
            Ok(SvmModel {
                model: hinge_sgd(rows, labels, &all, config)?,
                platt: Platt::Fallback { clip: MARGIN_CLIP },
            })
        }
    }
}

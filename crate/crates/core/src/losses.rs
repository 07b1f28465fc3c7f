//! Classification and regression losses with exact gradients.
//!
//! Every batch loss carries a `1/(2m)` (or `1/m` for cross entropy) prefactor,
//! so per-sample entries are contributions to the batch value and their
//! gradients are partial derivatives of the batch value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Prediction;

/// Floor applied to probabilities inside `log` for cross entropy.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Target distribution over `N` classes (one-hot or smoothed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::shape("label vector needs at least one class"));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid("label entries must lie in [0, 1]"));
        }
        let total: f64 = y.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("label entries sum to {total}")));
        }
        Ok(LabelVector(y))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::shape(format!(
                "class {class} out of range 0..{num_classes}"
            )));
        }
        let mut y = vec![0.0; num_classes];
        y[class] = 1.0;
        Ok(LabelVector(y))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the single `1.0` entry, if this is a one-hot vector.
    pub fn one_hot_class(&self) -> Option<usize> {
        let mut hot = None;
        for (k, &v) in self.0.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(k);
            } else if v != 0.0 {
                return None;
            }
        }
        hot
    }
}

/// Loss contribution of one sample and its partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_h: Vec<f64>,
    pub d_s: f64,
    /// Gradient with respect to the softmax logits, for losses fused with softmax.
    pub d_logits: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub samples: Vec<LossValue>,
    /// Batch loss, i.e. the sum of per-sample contributions.
    pub value: f64,
    /// Set when a zero probability met a nonzero target and was floored.
    pub clamped: bool,
}

impl BatchLoss {
    fn from_samples(samples: Vec<LossValue>, clamped: bool) -> Self {
        let value = samples.iter().map(|s| s.value).sum();
        BatchLoss {
            samples,
            value,
            clamped,
        }
    }
}

/// Which training objective to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Uncertainty-aware NLL with log-variance `s`.
    Uanll,
    /// Softmax cross entropy.
    Ce,
    /// Squared error without the variance term.
    Ablation,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Uanll => "uanll",
            LossKind::Ce => "ce",
            LossKind::Ablation => "ablation",
        }
    }

    pub fn evaluate(self, targets: &[LabelVector], preds: &[Prediction]) -> Result<BatchLoss> {
        let n = preds.first().map(Prediction::num_classes).unwrap_or(0);
        match self {
            LossKind::Uanll => uanll_loss(targets, preds, n),
            LossKind::Ablation => {
                let h: Vec<&[f64]> = preds.iter().map(|p| p.h.as_slice()).collect();
                ablation_loss(targets, &h)
            }
            LossKind::Ce => {
                let h: Vec<&[f64]> = preds.iter().map(|p| p.h.as_slice()).collect();
                cross_entropy_loss(targets, &h)
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uanll" => Ok(LossKind::Uanll),
            "ce" => Ok(LossKind::Ce),
            "ablation" => Ok(LossKind::Ablation),
            other => Err(Error::config(format!("unknown loss kind `{other}`"))),
        }
    }
}

fn check_batch(targets: &[LabelVector], h: &[&[f64]], num_classes: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::shape("empty batch"));
    }
    if targets.len() != h.len() {
        return Err(Error::shape(format!(
            "{} targets for {} predictions",
            targets.len(),
            h.len()
        )));
    }
    for (y, p) in targets.iter().zip(h) {
        if y.len() != num_classes || p.len() != num_classes {
            return Err(Error::shape(format!(
                "expected {num_classes} classes, got target {} / prediction {}",
                y.len(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("prediction entries must be finite"));
        }
    }
    Ok(())
}

fn squared_error(y: &[f64], h: &[f64]) -> f64 {
    y.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Uncertainty-aware NLL over a batch:
/// `(1/2m) Σ_i [exp(-s_i) Σ_k (y_ik - h_ik)^2 + N s_i]`.
pub fn uanll_loss(
    targets: &[LabelVector],
    preds: &[Prediction],
    num_classes: usize,
) -> Result<BatchLoss> {
    let h: Vec<&[f64]> = preds.iter().map(|p| p.h.as_slice()).collect();
    check_batch(targets, &h, num_classes)?;
    if preds.iter().any(|p| !p.s.is_finite()) {
        return Err(Error::invalid("log-variance must be finite"));
    }
    let m = targets.len() as f64;
    let n = num_classes as f64;
    let samples = targets
        .iter()
        .zip(preds)
        .map(|(y, p)| {
            let y = y.as_slice();
            let precision = (-p.s).exp();
            let se = squared_error(y, &p.h);
            LossValue {
                value: (precision * se + n * p.s) / (2.0 * m),
                d_h: y
                    .iter()
                    .zip(&p.h)
                    .map(|(yk, hk)| -precision * (yk - hk) / m)
                    .collect(),
                d_s: (-precision * se + n) / (2.0 * m),
                d_logits: None,
            }
        })
        .collect();
    Ok(BatchLoss::from_samples(samples, false))
}

/// Same loss parameterized by the variance itself. `d_s` holds `∂L/∂σ²`.
pub fn uanll_loss_sigma(
    targets: &[LabelVector],
    h: &[&[f64]],
    variances: &[f64],
    num_classes: usize,
) -> Result<BatchLoss> {
    check_batch(targets, h, num_classes)?;
    if variances.len() != targets.len() {
        return Err(Error::shape("one variance per sample required"));
    }
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("variance must be positive, got {v}")));
    }
    let m = targets.len() as f64;
    let n = num_classes as f64;
    let samples = targets
        .iter()
        .zip(h)
        .zip(variances)
        .map(|((y, hp), &var)| {
            let y = y.as_slice();
            let se = squared_error(y, hp);
            LossValue {
                value: (se / var + n * var.ln()) / (2.0 * m),
                d_h: y
                    .iter()
                    .zip(*hp)
                    .map(|(yk, hk)| -(yk - hk) / (var * m))
                    .collect(),
                d_s: (-se / (var * var) + n / var) / (2.0 * m),
                d_logits: None,
            }
        })
        .collect();
    Ok(BatchLoss::from_samples(samples, false))
}

/// Squared-error loss `(1/2m) Σ_i Σ_k (y_ik - h_ik)^2`; `d_s` is always zero.
pub fn ablation_loss(targets: &[LabelVector], h: &[&[f64]]) -> Result<BatchLoss> {
    let n = h.first().map(|p| p.len()).unwrap_or(0);
    check_batch(targets, h, n)?;
    let m = targets.len() as f64;
    let samples = targets
        .iter()
        .zip(h)
        .map(|(y, hp)| {
            let y = y.as_slice();
            LossValue {
                value: squared_error(y, hp) / (2.0 * m),
                d_h: y.iter().zip(*hp).map(|(yk, hk)| -(yk - hk) / m).collect(),
                d_s: 0.0,
                d_logits: None,
            }
        })
        .collect();
    Ok(BatchLoss::from_samples(samples, false))
}

/// Heteroscedastic regression loss `(1/2m) Σ [exp(-s)(y - h)^2 + s]`.
///
/// Each sample's `d_h` has a single entry.
pub fn het_regression_loss(y: &[f64], h: &[f64], s: &[f64]) -> Result<BatchLoss> {
    if y.is_empty() || y.len() != h.len() || y.len() != s.len() {
        return Err(Error::shape(
            "regression batch needs equal, non-zero lengths",
        ));
    }
    if y.iter().chain(h).chain(s).any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression inputs must be finite"));
    }
    let m = y.len() as f64;
    let samples = y
        .iter()
        .zip(h)
        .zip(s)
        .map(|((&yi, &hi), &si)| {
            let precision = (-si).exp();
            let se = (yi - hi) * (yi - hi);
            LossValue {
                value: (precision * se + si) / (2.0 * m),
                d_h: vec![-precision * (yi - hi) / m],
                d_s: (-precision * se + 1.0) / (2.0 * m),
                d_logits: None,
            }
        })
        .collect();
    Ok(BatchLoss::from_samples(samples, false))
}

/// Cross entropy `-(1/m) Σ_i Σ_k y_ik log h_ik` with probabilities floored at
/// [`CE_PROB_FLOOR`]. Also returns the fused softmax gradient `(h - y)/m`.
pub fn cross_entropy_loss(targets: &[LabelVector], h: &[&[f64]]) -> Result<BatchLoss> {
    let n = h.first().map(|p| p.len()).unwrap_or(0);
    check_batch(targets, h, n)?;
    let m = targets.len() as f64;
    let mut clamped = false;
    let samples = targets
        .iter()
        .zip(h)
        .map(|(y, hp)| {
            let y = y.as_slice();
            let mut value = 0.0;
            let mut d_h = Vec::with_capacity(n);
            for (&yk, &hk) in y.iter().zip(*hp) {
                if hk < CE_PROB_FLOOR && yk > 0.0 {
                    clamped = true;
                }
                let p = hk.max(CE_PROB_FLOOR);
                if yk > 0.0 {
                    value -= yk * p.ln();
                }
                d_h.push(-yk / (p * m));
            }
            LossValue {
                value: value / m,
                d_h,
                d_s: 0.0,
                d_logits: Some(y.iter().zip(*hp).map(|(yk, hk)| (hk - yk) / m).collect()),
            }
        })
        .collect();
    Ok(BatchLoss::from_samples(samples, clamped))
}

/// Label smoothing `(1 - r) y + r/N`.
pub fn smooth_labels(y: &LabelVector, rate: f64, num_classes: usize) -> Result<LabelVector> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!(
            "smoothing rate {rate} outside [0, 1]"
        )));
    }
    if y.len() != num_classes {
        return Err(Error::shape("label length differs from class count"));
    }
    let class = y
        .one_hot_class()
        .ok_or_else(|| Error::invalid("smoothing expects a one-hot label"))?;
    Ok(smooth_class(class, rate, num_classes))
}

pub(crate) fn smooth_class(class: usize, rate: f64, num_classes: usize) -> LabelVector {
    let off = rate / num_classes as f64;
    let mut y = vec![off; num_classes];
    y[class] = (1.0 - rate) + off;
    LabelVector(y)
}

//! Accuracy and expected calibration error.
//!
//! Bins are equal-width on `[0, 1]`; bin `b` of `B` covers `(b/B, (b+1)/B]`
//! and a confidence of exactly `0.0` lands in bin 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the samples in the bin (0 when empty).
    pub conf: f64,
    /// Fraction of correct samples in the bin (0 when empty).
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub accuracy: f64,
    pub ece: f64,
    pub bins: Vec<BinStat>,
}

impl MetricsReport {
    /// ECE recomputed from the stored bins.
    pub fn ece_from_bins(&self) -> f64 {
        ece_from_bins(&self.bins)
    }

    pub fn sample_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::domain("accuracy of an empty prediction set"));
    }
    if preds.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Bin index for `confidence` among `bins` right-inclusive bins.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = (confidence * bins as f64).ceil() as usize;
    b.saturating_sub(1).min(bins - 1)
}

pub fn reliability_bins(
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<Vec<BinStat>> {
    if bins == 0 {
        return Err(Error::domain("need at least one bin"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::shape("confidences and outcomes differ in length"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::domain(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            BinStat {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: n,
                conf: if n > 0 { conf_sum[b] / n as f64 } else { 0.0 },
                acc: if n > 0 {
                    hits[b] as f64 / n as f64
                } else {
                    0.0
                },
            }
        })
        .collect())
}

pub fn ece_from_bins(bins: &[BinStat]) -> f64 {
    let total: usize = bins.iter().map(|b| b.count).sum();
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / total as f64 * (b.acc - b.conf).abs())
        .sum()
}

/// `Σ_b (n_b / n) |acc_b - conf_b|` over non-empty bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(
        confidences,
        correct,
        bins,
    )?))
}

/// Accuracy, ECE and bin statistics for one method's predictions.
pub fn evaluate(
    method: &str,
    preds: &[usize],
    labels: &[usize],
    confidences: &[f64],
    bins: usize,
) -> Result<MetricsReport> {
    let accuracy = accuracy(preds, labels)?;
    let correct: Vec<bool> = preds.iter().zip(labels).map(|(p, l)| p == l).collect();
    let bins = reliability_bins(confidences, &correct, bins)?;
    Ok(MetricsReport {
        method: method.to_string(),
        accuracy,
        ece: ece_from_bins(&bins),
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 4], &[true; 4], 32).unwrap(), 0.0);
        let two = ece(&[0.8, 0.8], &[true, false], 32).unwrap();
        assert!((two - 0.3).abs() < 1e-15);
        assert!(ece(&[1.2], &[true], 10).is_err());
        assert!(ece(&[-0.1], &[true], 10).is_err());
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 4), 0);
        assert_eq!(bin_index(0.25, 4), 0);
        assert_eq!(bin_index(0.250001, 4), 1);
        assert_eq!(bin_index(0.5, 4), 1);
        assert_eq!(bin_index(1.0, 4), 3);
        assert_eq!(bin_index(1.0 / 32.0, 32), 0);
        // 0.0 and 0.25 share bin 0; 0.5 sits in bin 1, 1.0 in bin 3.
        let bins = reliability_bins(&[0.0, 0.25, 0.5, 1.0], &[false, true, true, true], 4).unwrap();
        assert_eq!(
            bins.iter().map(|b| b.count).collect::<Vec<_>>(),
            vec![2, 1, 0, 1]
        );
        // bin0: acc 0.5, conf 0.125 -> 0.375 * 2/4; bin1: |1 - 0.5| * 1/4; bin3: 0.
        let e = ece_from_bins(&bins);
        assert!((e - (0.375 * 0.5 + 0.5 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn report_counts_every_sample() {
        let r = evaluate("x", &[0, 1, 1], &[0, 1, 0], &[0.9, 0.6, 0.3], 32).unwrap();
        assert_eq!(r.sample_count(), 3);
        assert_eq!(r.ece, r.ece_from_bins());
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }
}

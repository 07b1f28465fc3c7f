//! Multi-view inference and aggregation of per-view predictions.
//!
//! Each view contributes its predicted class, its confidence (largest class
//! probability) and its certainty `1 - sigmoid(s)`. Views are fused either by
//! the mode of the predicted classes or by a weighted bin count over classes,
//! where the weight is the confidence or certainty itself (soft) or an
//! indicator of it exceeding a threshold (hard). Ties go to the lowest class.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{random_resized_crop, view_rng, LabeledImage};
use crate::error::{Error, Result};
use crate::ndmath::{sigmoid, Prediction, TwoHeadMlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub pred_class: usize,
    pub confidence: f64,
    pub certainty: f64,
    /// Model output; absent when the view was reloaded from a CSV dump.
    pub raw: Option<Prediction>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

impl ViewPrediction {
    pub fn from_prediction(raw: Prediction) -> Self {
        let pred_class = argmax(&raw.h);
        ViewPrediction {
            pred_class,
            confidence: raw.h[pred_class],
            certainty: 1.0 - sigmoid(raw.s),
            raw: Some(raw),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSet {
    pub sample_index: usize,
    pub views: Vec<ViewPrediction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationKind {
    #[serde(rename = "MVM")]
    Mvm,
    #[serde(rename = "MVWCo-S")]
    ConfidenceSoft,
    #[serde(rename = "MVWCe-S")]
    CertaintySoft,
    #[serde(rename = "MVWCo-H")]
    ConfidenceHard,
    #[serde(rename = "MVWCe-H")]
    CertaintyHard,
}

impl AggregationKind {
    pub const ALL: [AggregationKind; 5] = [
        AggregationKind::Mvm,
        AggregationKind::ConfidenceSoft,
        AggregationKind::CertaintySoft,
        AggregationKind::ConfidenceHard,
        AggregationKind::CertaintyHard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationKind::Mvm => "MVM",
            AggregationKind::ConfidenceSoft => "MVWCo-S",
            AggregationKind::CertaintySoft => "MVWCe-S",
            AggregationKind::ConfidenceHard => "MVWCo-H",
            AggregationKind::CertaintyHard => "MVWCe-H",
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(
            self,
            AggregationKind::ConfidenceHard | AggregationKind::CertaintyHard
        )
    }
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown aggregation method `{s}`")))
    }
}

/// An aggregation rule plus its threshold (hard kinds only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationMethod {
    pub kind: AggregationKind,
    pub threshold: Option<f64>,
}

impl AggregationMethod {
    pub fn new(kind: AggregationKind, threshold: Option<f64>) -> Result<Self> {
        let m = AggregationMethod { kind, threshold };
        m.validate()?;
        Ok(m)
    }

    pub fn soft(kind: AggregationKind) -> Self {
        AggregationMethod {
            kind,
            threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.is_hard(), self.threshold) {
            (true, None) => Err(Error::config(format!(
                "{} needs a threshold",
                self.kind.name()
            ))),
            (true, Some(t)) if !(t > 0.0 && t < 1.0) => {
                Err(Error::config(format!("threshold {t} outside (0, 1)")))
            }
            (false, Some(_)) => Err(Error::config(format!(
                "{} does not take a threshold",
                self.kind.name()
            ))),
            _ => Ok(()),
        }
    }

    fn weight(&self, view: &ViewPrediction) -> f64 {
        let t = self.threshold.unwrap_or(0.0);
        match self.kind {
            AggregationKind::Mvm => 1.0,
            AggregationKind::ConfidenceSoft => view.confidence,
            AggregationKind::CertaintySoft => view.certainty,
            AggregationKind::ConfidenceHard => (view.confidence > t) as u8 as f64,
            AggregationKind::CertaintyHard => (view.certainty > t) as u8 as f64,
        }
    }
}

/// Fused class for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregated {
    pub class: usize,
    /// Winning bin weight divided by the total weight.
    pub confidence: f64,
    /// Every weight was zero and the mode was used instead.
    pub fallback: bool,
}

fn bin_count(
    views: &[ViewPrediction],
    num_classes: usize,
    weight: impl Fn(&ViewPrediction) -> f64,
) -> Vec<f64> {
    let mut z = vec![0.0; num_classes];
    for v in views {
        z[v.pred_class] += weight(v);
    }
    z
}

fn mode_with_share(views: &[ViewPrediction], num_classes: usize) -> (usize, f64) {
    let z = bin_count(views, num_classes, |_| 1.0);
    let k = argmax(&z);
    (k, z[k] / views.len() as f64)
}

fn class_count(views: &MultiViewSet) -> usize {
    views
        .views
        .iter()
        .map(|v| v.pred_class + 1)
        .max()
        .unwrap_or(1)
}

/// Most frequent predicted class, lowest index on ties.
pub fn aggregate_mode(views: &MultiViewSet) -> usize {
    mode_with_share(&views.views, class_count(views)).0
}

/// Weighted bin count over classes. Falls back to the mode (flagged) when all weights are zero.
pub fn aggregate_weighted(
    views: &MultiViewSet,
    method: &AggregationMethod,
    num_classes: usize,
) -> Result<Aggregated> {
    method.validate()?;
    if views.views.is_empty() {
        return Err(Error::shape(format!(
            "sample {} has no views",
            views.sample_index
        )));
    }
    if let Some(v) = views.views.iter().find(|v| v.pred_class >= num_classes) {
        return Err(Error::shape(format!(
            "predicted class {} out of range 0..{num_classes}",
            v.pred_class
        )));
    }
    let z = bin_count(&views.views, num_classes, |v| method.weight(v));
    let total: f64 = z.iter().sum();
    if total > 0.0 {
        let class = argmax(&z);
        Ok(Aggregated {
            class,
            confidence: z[class] / total,
            fallback: false,
        })
    } else {
        let (class, share) = mode_with_share(&views.views, num_classes);
        Ok(Aggregated {
            class,
            confidence: share,
            fallback: true,
        })
    }
}

/// Applies `method` to every sample, preserving order.
pub fn aggregate_batch(
    all: &[MultiViewSet],
    method: &AggregationMethod,
    num_classes: usize,
) -> Result<Vec<Aggregated>> {
    for set in all {
        for v in &set.views {
            if v.raw.as_ref().is_some_and(|p| p.h.len() != num_classes) {
                return Err(Error::shape(format!(
                    "sample {} mixes class counts",
                    set.sample_index
                )));
            }
        }
    }
    all.iter()
        .map(|set| aggregate_weighted(set, method, num_classes))
        .collect()
}

/// Plain single-view prediction of the un-augmented input.
pub fn predict_single(model: &TwoHeadMlp, sample: &LabeledImage) -> Result<ViewPrediction> {
    Ok(ViewPrediction::from_prediction(
        model.predict(&sample.pixels)?,
    ))
}

/// Predictions on `n` random-resized crops of one sample.
///
/// View `j` of sample `i` draws from the substream `(seed, i, j)`; with `sc = 1`
/// every view is the un-augmented input.
pub fn predict_views(
    model: &TwoHeadMlp,
    sample: &LabeledImage,
    sample_index: usize,
    n: usize,
    sc: f64,
    seed: u64,
) -> Result<MultiViewSet> {
    if n == 0 {
        return Err(Error::config("need at least one view"));
    }
    let views = (0..n)
        .map(|j| {
            let mut rng = view_rng(seed, sample_index as u64, j as u64);
            let view = random_resized_crop(sample, sc, &mut rng)?;
            Ok(ViewPrediction::from_prediction(
                model.predict(&view.pixels)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiViewSet {
        sample_index,
        views,
    })
}

pub fn predict_views_batch(
    model: &TwoHeadMlp,
    samples: &[LabeledImage],
    n: usize,
    sc: f64,
    seed: u64,
) -> Result<Vec<MultiViewSet>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| predict_views(model, s, i, n, sc, seed))
        .collect()
}

pub const VIEWS_CSV_HEADER: &str = "sample_index,view_index,pred_class,confidence,certainty";

/// Writes `sample_index,view_index,pred_class,confidence,certainty` rows.
pub fn write_views_csv<W: Write>(mut out: W, all: &[MultiViewSet]) -> Result<()> {
    writeln!(out, "{VIEWS_CSV_HEADER}")?;
    for set in all {
        for (j, v) in set.views.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:?},{:?}",
                set.sample_index, j, v.pred_class, v.confidence, v.certainty
            )?;
        }
    }
    Ok(())
}

/// Reads a views dump back into per-sample sets (without raw outputs).
pub fn read_views_csv<R: BufRead>(input: R) -> Result<Vec<MultiViewSet>> {
    let mut sets: Vec<MultiViewSet> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != VIEWS_CSV_HEADER {
                return Err(Error::format("unexpected views CSV header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::format(format!("line {}: expected 5 columns", n + 1)));
        }
        let bad = || Error::format(format!("line {}: unparsable field", n + 1));
        let sample_index: usize = cols[0].parse().map_err(|_| bad())?;
        let view = ViewPrediction {
            pred_class: cols[2].parse().map_err(|_| bad())?,
            confidence: cols[3].parse().map_err(|_| bad())?,
            certainty: cols[4].parse().map_err(|_| bad())?,
            raw: None,
        };
        match sets.last_mut() {
            Some(set) if set.sample_index == sample_index => set.views.push(view),
            _ => sets.push(MultiViewSet {
                sample_index,
                views: vec![view],
            }),
        }
    }
    Ok(sets)
}

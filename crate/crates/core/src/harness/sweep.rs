use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{
    in_stage, load_source, prepare_data, score_methods, test_views, train_seed, tune_seed,
};
use crate::error::{Error, Result};
use crate::multiview::MultiViewSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Number of views `n`.
    Views,
    /// Test-time crop scale `sc`.
    Scale,
    /// Hard-weight threshold `t`.
    Threshold,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Views => "views",
            SweepAxis::Scale => "scale",
            SweepAxis::Threshold => "threshold",
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepAxis::Views => v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64,
            SweepAxis::Scale => v > 0.0 && v <= 1.0,
            SweepAxis::Threshold => v > 0.0 && v < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{v} is not a valid {} value",
                self.name()
            )))
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "views" | "n" => Ok(SweepAxis::Views),
            "scale" | "sc" => Ok(SweepAxis::Scale),
            "threshold" | "t" => Ok(SweepAxis::Threshold),
            _ => Err(Error::config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub method: String,
    pub accuracy: f64,
    pub ece: f64,
    pub fallback_rate: f64,
}

fn prefix(views: &[MultiViewSet], n: usize) -> Vec<MultiViewSet> {
    views
        .iter()
        .map(|s| MultiViewSet {
            sample_index: s.sample_index,
            views: s.views[..n].to_vec(),
        })
        .collect()
}

/// Trains once per seed, then evaluates every configured method at each axis value
/// with everything else held fixed.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    for &v in values {
        axis.check(v)?;
    }
    let full = in_stage("load", cfg.seeds[0], load_source(&cfg.data))?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data = in_stage("prepare", seed, prepare_data(cfg, &full, seed))?;
        let model = in_stage("train", seed, train_seed(cfg, &data, seed))?.best_model;
        let tuned = in_stage("tune", seed, tune_seed(cfg, &model, &data.val, seed))?;
        let (sc, t) = match &tuned {
            Some((p, _)) => (p.sc, p.t),
            None => (cfg.multiview.sc_test, cfg.multiview.threshold),
        };
        let n = cfg.multiview.views;
        // Views of sample i use substreams (i, j), so smaller view counts are prefixes.
        let shared = match axis {
            SweepAxis::Views => {
                let max_n = values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
                Some(in_stage(
                    "views",
                    seed,
                    test_views(&model, &data.test, max_n, sc, seed),
                )?)
            }
            SweepAxis::Threshold => Some(in_stage(
                "views",
                seed,
                test_views(&model, &data.test, n, sc, seed),
            )?),
            SweepAxis::Scale => None,
        };
        for &v in values {
            let (views, thr) = match axis {
                SweepAxis::Views => (prefix(shared.as_ref().unwrap(), v as usize), t),
                SweepAxis::Threshold => (shared.clone().unwrap(), v),
                SweepAxis::Scale => (
                    in_stage("views", seed, test_views(&model, &data.test, n, v, seed))?,
                    t,
                ),
            };
            let scored = in_stage(
                "evaluate",
                seed,
                score_methods(&cfg.methods, &model, &data.test, &views, thr, cfg.ece_bins),
            )?;
            rows.extend(scored.into_iter().map(|r| SweepRow {
                axis,
                value: v,
                seed,
                method: r.method.to_string(),
                accuracy: r.accuracy,
                ece: r.ece,
                fallback_rate: r.fallback_rate,
            }));
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "axis,value,seed,method,accuracy,ece,fallback_rate";

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:?},{},{},{:?},{:?},{:?}",
            r.axis, r.value, r.seed, r.method, r.accuracy, r.ece, r.fallback_rate
        )?;
    }
    Ok(())
}

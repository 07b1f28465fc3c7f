use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::pipeline::{ModelSidecar, RunOutput};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::multiview::write_views_csv;
use crate::ndmath::save_checkpoint;
use crate::pso::{write_trace_csv, Weighting, TRACE_CSV_HEADER};
use crate::trainer::TRAINLOG_CSV_HEADER;

pub const STD_CONVENTION: &str = "population";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub sc: f64,
    pub t: f64,
    pub val_accuracy: f64,
    pub winning_weighting: Weighting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub accuracy: f64,
    pub ece: f64,
    /// Fraction of samples whose aggregation fell back to the mode.
    pub fallback_rate: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub sc_test: f64,
    pub threshold: f64,
    pub tuned: Option<TunedParams>,
    pub methods: Vec<MethodResult>,
}

impl SeedReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub fallback_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Standard deviations divide by the number of seeds.
    pub std_convention: String,
    pub seeds: Vec<SeedReport>,
    pub summary: Vec<MethodSummary>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunReport {
    pub fn from_seeds(seeds: Vec<SeedReport>, methods: &[Method]) -> Self {
        let summary = methods
            .iter()
            .map(|&m| {
                let rows: Vec<&MethodResult> = seeds.iter().filter_map(|s| s.method(m)).collect();
                let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
                let ece: Vec<f64> = rows.iter().map(|r| r.ece).collect();
                let fb: Vec<f64> = rows.iter().map(|r| r.fallback_rate).collect();
                let (accuracy_mean, accuracy_std) = mean_std(&acc);
                let (ece_mean, ece_std) = mean_std(&ece);
                MethodSummary {
                    method: m,
                    accuracy_mean,
                    accuracy_std,
                    ece_mean,
                    ece_std,
                    fallback_mean: mean_std(&fb).0,
                }
            })
            .collect();
        RunReport {
            std_convention: STD_CONVENTION.to_string(),
            seeds,
            summary,
        }
    }

    pub fn summary_for(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }
}

pub const REPORT_CSV_HEADER: &str = "seed,method,accuracy,ece,fallback_rate,sc_test,threshold";

pub fn write_report_csv<W: Write>(mut out: W, report: &RunReport) -> Result<()> {
    writeln!(
        out,
        "# mean and std rows use the {} standard deviation",
        report.std_convention
    )?;
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for s in &report.seeds {
        for r in &s.methods {
            writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?}",
                s.seed, r.method, r.accuracy, r.ece, r.fallback_rate, s.sc_test, s.threshold
            )?;
        }
    }
    for m in &report.summary {
        writeln!(
            out,
            "mean,{},{:?},{:?},{:?},,",
            m.method, m.accuracy_mean, m.ece_mean, m.fallback_mean
        )?;
        writeln!(
            out,
            "std,{},{:?},{:?},,,",
            m.method, m.accuracy_std, m.ece_std
        )?;
    }
    Ok(())
}

/// Writes report.json, report.csv, trainlog.csv, tuning_trace.csv, per-seed
/// checkpoints and, when enabled, views.csv.
pub fn write_run(out: &RunOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), out.config.to_json()?)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)?,
    )?;
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &out.report)?;
    fs::write(dir.join("report.csv"), csv)?;

    let mut trainlog = Vec::new();
    writeln!(trainlog, "seed,{TRAINLOG_CSV_HEADER}")?;
    for s in &out.seeds {
        for e in &s.trainlog.epochs {
            writeln!(
                trainlog,
                "{},{},{:?},{:?},{:?},{:?}",
                s.report.seed, e.epoch, e.lr, e.train_loss, e.val_loss, e.val_acc
            )?;
        }
    }
    fs::write(dir.join("trainlog.csv"), trainlog)?;

    if out.config.tuning.enabled {
        let mut trace = Vec::new();
        writeln!(trace, "seed,{TRACE_CSV_HEADER}")?;
        for s in &out.seeds {
            let mut rows = Vec::new();
            write_trace_csv(&mut rows, &s.trace)?;
            for line in String::from_utf8_lossy(&rows).lines().skip(1) {
                writeln!(trace, "{},{line}", s.report.seed)?;
            }
        }
        fs::write(dir.join("tuning_trace.csv"), trace)?;
    }

    for s in &out.seeds {
        let seed = s.report.seed;
        save_checkpoint(&s.model, dir.join(format!("model_{seed}.ucls")))?;
        let sidecar = ModelSidecar {
            seed,
            activation: s.model.activation(),
            layer_dims: s.model.layer_dims().to_vec(),
            num_classes: s.model.num_classes(),
            best_epoch: s.report.best_epoch,
            means: s.means.clone(),
            stds: s.stds.clone(),
            train: out.config.train.clone(),
        };
        fs::write(
            dir.join(format!("model_{seed}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        if out.config.write_views && !s.views.is_empty() {
            let f = fs::File::create(dir.join(format!("views_{seed}.csv")))?;
            write_views_csv(std::io::BufWriter::new(f), &s.views)?;
        }
    }
    Ok(())
}

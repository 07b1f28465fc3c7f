use std::fs;
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uacls_core::data::{load_dataset, save_dataset, FlipDirection};
use uacls_core::harness::{
    load_source, prepare_data, run_experiment, score_methods, sweep, test_views, train_config_for,
    train_seed, tune_seed, write_report_csv, write_run, write_sweep_csv, ExperimentConfig, Method,
    ModelSidecar, PreparedData, RunReport, SeedReport, SweepAxis, TunedParams,
};
use uacls_core::multiview::write_views_csv;
use uacls_core::ndmath::{load_checkpoint, save_checkpoint};
use uacls_core::pso::write_trace_csv;
use uacls_core::trainer::write_trainlog_csv;
use uacls_core::{LossKind, TwoHeadMlp};

#[derive(Parser)]
#[command(
    name = "uacls",
    version,
    about = "Uncertainty-aware classification under label noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as JSON.
    Config(Common),
    /// Generate or ingest data, inject noise, split and normalize one seed's datasets.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen-data`; prepared from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the test-time crop scale and threshold on validation data.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the test split with every configured method.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// tune.json written by `tune`; overrides the crop scale and threshold.
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate across values of one inference parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// views, scale or threshold.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline over every seed, writing reports and checkpoints.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed for single-seed commands (defaults to the first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<usize>>,
    #[arg(long)]
    noise_rate: Option<f64>,
    /// both or first-to-second.
    #[arg(long)]
    noise_direction: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    decay_start_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// uanll, ce or ablation.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    smooth_rate: Option<f64>,
    #[arg(long)]
    aug_scale: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    sc_test: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Enable swarm tuning of the crop scale and threshold.
    #[arg(long)]
    tune: bool,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    ece_bins: Option<usize>,
    #[arg(long)]
    write_views: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.split {
            cfg.split = [v[0], v[1], v[2]];
        }
        if let Some(v) = self.noise_rate {
            cfg.noise.rate = v;
        }
        if let Some(v) = &self.noise_direction {
            cfg.noise.direction = match v.as_str() {
                "both" => FlipDirection::Both,
                "first-to-second" => FlipDirection::FirstToSecond,
                _ => bail!("unknown noise direction `{v}`"),
            };
        }
        if let Some(v) = &self.hidden {
            cfg.model.hidden = v.clone();
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
            t.decay_start_epoch = t.decay_start_epoch.min(v);
        }
        if let Some(v) = self.decay_start_epoch {
            t.decay_start_epoch = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr0 {
            t.lr0 = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.loss {
            t.loss_kind = v;
        }
        if let Some(v) = self.smooth_rate {
            t.smooth_rate = v;
        }
        if let Some(v) = self.aug_scale {
            t.aug_scale = v;
        }
        if let Some(v) = self.views {
            cfg.multiview.views = v;
        }
        if let Some(v) = self.sc_test {
            cfg.multiview.sc_test = v;
        }
        if let Some(v) = self.threshold {
            cfg.multiview.threshold = v;
        }
        if self.tune {
            cfg.tuning.enabled = true;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = self.ece_bins {
            cfg.ece_bins = v;
        }
        if self.write_views {
            cfg.write_views = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }
}

#[derive(Serialize, Deserialize)]
struct DataMeta {
    seed: u64,
    means: Vec<f64>,
    stds: Vec<f64>,
}

fn write_data(dir: &Path, data: &PreparedData, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_dataset(&data.train, dir.join("train.udat"))?;
    save_dataset(&data.val, dir.join("val.udat"))?;
    save_dataset(&data.test, dir.join("test.udat"))?;
    let meta = DataMeta {
        seed,
        means: data.means.clone(),
        stds: data.stds.clone(),
    };
    fs::write(dir.join("data.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn read_data(dir: &Path) -> Result<PreparedData> {
    let meta: DataMeta = serde_json::from_str(&fs::read_to_string(dir.join("data.json"))?)?;
    Ok(PreparedData {
        train: load_dataset(dir.join("train.udat"))?,
        val: load_dataset(dir.join("val.udat"))?,
        test: load_dataset(dir.join("test.udat"))?,
        means: meta.means,
        stds: meta.stds,
    })
}

fn read_model(dir: &Path) -> Result<(TwoHeadMlp, ModelSidecar)> {
    let sidecar: ModelSidecar = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
    let model = load_checkpoint(dir.join("model.ucls"), sidecar.activation)?;
    Ok((model, sidecar))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Config(common) => {
            let json = common.load()?.to_json()?;
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            if let Err(e) = writeln!(std::io::stdout(), "{json}") {
                if e.kind() != ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let seed = common.seed(&cfg);
            let data = prepare_data(&cfg, &load_source(&cfg.data)?, seed)?;
            write_data(&out, &data, seed)?;
            eprintln!(
                "wrote {} / {} / {} samples to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { common, data, out } => {
            let cfg = common.load()?;
            let seed = common.seed(&cfg);
            let data = match data {
                Some(d) => read_data(&d)?,
                None => prepare_data(&cfg, &load_source(&cfg.data)?, seed)?,
            };
            let trained = train_seed(&cfg, &data, seed)?;
            fs::create_dir_all(&out)?;
            save_checkpoint(&trained.best_model, out.join("model.ucls"))?;
            let sidecar = ModelSidecar {
                seed,
                activation: trained.best_model.activation(),
                layer_dims: trained.best_model.layer_dims().to_vec(),
                num_classes: trained.best_model.num_classes(),
                best_epoch: trained.log.best_epoch,
                means: data.means.clone(),
                stds: data.stds.clone(),
                train: train_config_for(&cfg, seed),
            };
            fs::write(
                out.join("model.json"),
                serde_json::to_string_pretty(&sidecar)?,
            )?;
            write_trainlog_csv(
                BufWriter::new(fs::File::create(out.join("trainlog.csv"))?),
                &trained.log,
            )?;
            if let Some(b) = trained.log.best() {
                eprintln!(
                    "best epoch {}: val_loss {:.5}, val_acc {:.4}",
                    b.epoch, b.val_loss, b.val_acc
                );
            }
        }
        Command::Tune {
            common,
            model,
            data,
            out,
        } => {
            let mut cfg = common.load()?;
            cfg.tuning.enabled = true;
            let (model, sidecar) = read_model(&model)?;
            let data = read_data(&data)?;
            let (params, trace) =
                tune_seed(&cfg, &model, &data.val, sidecar.seed)?.expect("tuning enabled");
            fs::create_dir_all(&out)?;
            write_trace_csv(
                BufWriter::new(fs::File::create(out.join("tuning_trace.csv"))?),
                &trace,
            )?;
            fs::write(
                out.join("tune.json"),
                serde_json::to_string_pretty(&params)?,
            )?;
            eprintln!(
                "sc = {:.4}, t = {:.4}, validation accuracy {:.4}",
                params.sc, params.t, params.val_accuracy
            );
        }
        Command::Eval {
            common,
            model,
            data,
            tuned,
            out,
        } => {
            let cfg = common.load()?;
            let (model, sidecar) = read_model(&model)?;
            let data = read_data(&data)?;
            let seed = sidecar.seed;
            let tuned: Option<TunedParams> = match tuned {
                Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                None => None,
            };
            let (sc, t) = match &tuned {
                Some(p) => (p.sc, p.t),
                None => (cfg.multiview.sc_test, cfg.multiview.threshold),
            };
            let views = if cfg.needs_views() {
                test_views(&model, &data.test, cfg.multiview.views, sc, seed)?
            } else {
                Vec::new()
            };
            let methods = score_methods(&cfg.methods, &model, &data.test, &views, t, cfg.ece_bins)?;
            let seed_report = SeedReport {
                seed,
                best_epoch: sidecar.best_epoch,
                sc_test: sc,
                threshold: t,
                tuned,
                methods,
            };
            let report = RunReport::from_seeds(vec![seed_report], &cfg.methods);
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            write_report_csv(
                BufWriter::new(fs::File::create(out.join("report.csv"))?),
                &report,
            )?;
            if cfg.write_views {
                write_views_csv(
                    BufWriter::new(fs::File::create(out.join("views.csv"))?),
                    &views,
                )?;
            }
            print_summary(&report);
        }
        Command::Sweep {
            common,
            axis,
            values,
            out,
        } => {
            let cfg = common.load()?;
            let rows = sweep(&cfg, axis, &values)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_sweep_csv(BufWriter::new(fs::File::create(&out)?), &rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Run { common, out } => {
            let cfg = common.load()?;
            let output = run_experiment(&cfg)?;
            write_run(&output, &out)?;
            print_summary(&output.report);
        }
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    for m in &report.summary {
        println!(
            "{:<12} accuracy {:.4} ± {:.4}  ece {:.4} ± {:.4}",
            m.method.name(),
            m.accuracy_mean,
            m.accuracy_std,
            m.ece_mean,
            m.ece_std
        );
    }
}

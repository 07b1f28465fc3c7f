use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Method};
use super::report::{MethodResult, RunReport, SeedReport, TunedParams};
use crate::data::{
    channel_stats, gen_synthetic_shapes, inject_asymmetric_noise, load_cifar10_batches,
    load_dataset, normalize, split_dataset, substream_seed, Dataset,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::multiview::{aggregate_batch, predict_single, predict_views_batch, MultiViewSet};
use crate::ndmath::TwoHeadMlp;
use crate::pso::{tune_inference, TraceRow};
use crate::trainer::{train_model, TrainConfig, TrainLog, TrainOutcome};

const SPLIT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
const TUNE_STREAM: u64 = 5;
const TUNE_VIEW_STREAM: u64 = 6;
const TEST_VIEW_STREAM: u64 = 7;

/// Seed of one pipeline stage for a run seed.
pub fn stage_seed(seed: u64, stream: u64) -> u64 {
    substream_seed(seed, stream, 0)
}

pub(crate) fn in_stage<T>(stage: &'static str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage,
            seed,
            source: Box::new(e),
        },
    })
}

pub fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(spec) => gen_synthetic_shapes(spec),
        DataSource::Cifar10 { files } => load_cifar10_batches(files),
        DataSource::Container { path } => load_dataset(path),
    }
}

/// Normalized splits for one seed; labels of train and validation carry the injected noise.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn prepare_data(cfg: &ExperimentConfig, full: &Dataset, seed: u64) -> Result<PreparedData> {
    let (train, val, test) = split_dataset(full, cfg.split, stage_seed(seed, SPLIT_STREAM))?;
    let noise = cfg
        .noise
        .spec(full.num_classes, stage_seed(seed, NOISE_STREAM));
    let train = inject_asymmetric_noise(&train, &noise)?;
    let mut val_noise = noise.clone();
    val_noise.seed = substream_seed(noise.seed, 1, 1);
    let val = inject_asymmetric_noise(&val, &val_noise)?;
    let (means, stds) = match &cfg.normalization {
        Some((m, s)) => (m.clone(), s.clone()),
        None => channel_stats(&train)?,
    };
    Ok(PreparedData {
        train: normalize(&train, &means, &stds)?,
        val: normalize(&val, &means, &stds)?,
        test: normalize(&test, &means, &stds)?,
        means,
        stds,
    })
}

pub fn init_model(
    cfg: &ExperimentConfig,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<TwoHeadMlp> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&cfg.model.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, INIT_STREAM));
    TwoHeadMlp::init_uniform(&dims, num_classes, cfg.model.activation, &mut rng)
}

pub fn train_config_for(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: stage_seed(seed, TRAIN_STREAM),
        ..cfg.train.clone()
    }
}

pub fn train_seed(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<TrainOutcome> {
    let model = init_model(cfg, data.train.feature_dim(), data.train.num_classes, seed)?;
    train_model(&data.train, &data.val, &model, &train_config_for(cfg, seed))
}

/// Tuned `(sc, t)` and its trace, or `None` when tuning is disabled.
pub fn tune_seed(
    cfg: &ExperimentConfig,
    model: &TwoHeadMlp,
    val: &Dataset,
    seed: u64,
) -> Result<Option<(TunedParams, Vec<TraceRow>)>> {
    if !cfg.tuning.enabled {
        return Ok(None);
    }
    let swarm = cfg.tuning.swarm(stage_seed(seed, TUNE_STREAM));
    let r = tune_inference(
        model,
        val,
        cfg.tuning.views,
        &swarm,
        stage_seed(seed, TUNE_VIEW_STREAM),
    )?;
    let params = TunedParams {
        sc: r.sc,
        t: r.t,
        val_accuracy: r.best_accuracy,
        winning_weighting: r.winning_weighting,
    };
    Ok(Some((params, r.trace)))
}

pub fn test_views(
    model: &TwoHeadMlp,
    test: &Dataset,
    n: usize,
    sc: f64,
    seed: u64,
) -> Result<Vec<MultiViewSet>> {
    predict_views_batch(
        model,
        &test.images,
        n,
        sc,
        stage_seed(seed, TEST_VIEW_STREAM),
    )
}

/// Scores every configured method on the test set given precomputed views.
pub fn score_methods(
    methods: &[Method],
    model: &TwoHeadMlp,
    test: &Dataset,
    views: &[MultiViewSet],
    threshold: f64,
    bins: usize,
) -> Result<Vec<MethodResult>> {
    let labels = test.labels();
    methods
        .iter()
        .map(|&m| {
            let (preds, conf, fallbacks) = match m.aggregation(threshold)? {
                None => {
                    let single = test
                        .images
                        .iter()
                        .map(|img| predict_single(model, img))
                        .collect::<Result<Vec<_>>>()?;
                    let preds = single.iter().map(|v| v.pred_class).collect::<Vec<_>>();
                    let conf = single.iter().map(|v| v.confidence).collect::<Vec<_>>();
                    (preds, conf, 0)
                }
                Some(agg) => {
                    if views.len() != test.len() {
                        return Err(Error::shape("views do not cover the test set"));
                    }
                    let out = aggregate_batch(views, &agg, test.num_classes)?;
                    let fallbacks = out.iter().filter(|a| a.fallback).count();
                    (
                        out.iter().map(|a| a.class).collect(),
                        out.iter().map(|a| a.confidence).collect(),
                        fallbacks,
                    )
                }
            };
            let metrics = evaluate(m.name(), &preds, &labels, &conf, bins)?;
            Ok(MethodResult {
                method: m,
                accuracy: metrics.accuracy,
                ece: metrics.ece,
                fallback_rate: fallbacks as f64 / test.len() as f64,
                metrics,
            })
        })
        .collect()
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedOutput {
    pub report: SeedReport,
    pub model: TwoHeadMlp,
    pub trainlog: TrainLog,
    pub trace: Vec<TraceRow>,
    pub views: Vec<MultiViewSet>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Runs every stage for one seed on an already loaded dataset.
pub fn run_seed(cfg: &ExperimentConfig, full: &Dataset, seed: u64) -> Result<SeedOutput> {
    let data = in_stage("prepare", seed, prepare_data(cfg, full, seed))?;
    let trained = in_stage("train", seed, train_seed(cfg, &data, seed))?;
    let model = trained.best_model;
    let tuned = in_stage("tune", seed, tune_seed(cfg, &model, &data.val, seed))?;
    let (sc, t) = match &tuned {
        Some((p, _)) => (p.sc, p.t),
        None => (cfg.multiview.sc_test, cfg.multiview.threshold),
    };
    let views = if cfg.needs_views() {
        in_stage(
            "views",
            seed,
            test_views(&model, &data.test, cfg.multiview.views, sc, seed),
        )?
    } else {
        Vec::new()
    };
    let methods = in_stage(
        "evaluate",
        seed,
        score_methods(&cfg.methods, &model, &data.test, &views, t, cfg.ece_bins),
    )?;
    let (tuned, trace) = match tuned {
        Some((p, tr)) => (Some(p), tr),
        None => (None, Vec::new()),
    };
    Ok(SeedOutput {
        report: SeedReport {
            seed,
            best_epoch: trained.log.best_epoch,
            sc_test: sc,
            threshold: t,
            tuned,
            methods,
        },
        model,
        trainlog: trained.log,
        trace,
        views,
        means: data.means,
        stds: data.stds,
    })
}

/// Report plus per-seed artifacts, in seed order.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub report: RunReport,
    pub seeds: Vec<SeedOutput>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let seed0 = cfg.seeds[0];
    let full = in_stage("load", seed0, load_source(&cfg.data))?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, &full, s))
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport::from_seeds(
        seeds.iter().map(|s| s.report.clone()).collect(),
        &cfg.methods,
    );
    Ok(RunOutput {
        config: cfg.clone(),
        report,
        seeds,
    })
}

/// Model metadata stored next to a binary checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub seed: u64,
    pub activation: crate::ndmath::Activation,
    pub layer_dims: Vec<usize>,
    pub num_classes: usize,
    pub best_epoch: Option<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub train: TrainConfig,
}

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FlipDirection, NoiseSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_ECE_BINS;
use crate::multiview::{AggregationKind, AggregationMethod};
use crate::ndmath::Activation;
use crate::pso::SwarmConfig;
use crate::trainer::TrainConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [42, 0, 17, 9, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// CIFAR-10 binary batches, concatenated before splitting.
    Cifar10 {
        files: Vec<PathBuf>,
    },
    /// A dataset container written by `gen-data` or [`crate::data::save_dataset`].
    Container {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub rate: f64,
    /// Flip pairs; adjacent classes `(0,1), (2,3), …` when absent.
    pub pairs: Option<Vec<(usize, usize)>>,
    pub direction: FlipDirection,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rate: 0.4,
            pairs: None,
            direction: FlipDirection::Both,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self, num_classes: usize, seed: u64) -> NoiseSpec {
        let mut spec = NoiseSpec::adjacent_pairs(num_classes, self.rate, seed);
        if let Some(p) = &self.pairs {
            spec.pairs = p.clone();
        }
        spec.direction = self.direction;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiviewConfig {
    pub views: usize,
    pub sc_test: f64,
    /// Hard-weight threshold used when tuning is disabled.
    pub threshold: f64,
}

impl Default for MultiviewConfig {
    fn default() -> Self {
        MultiviewConfig {
            views: 50,
            sc_test: 0.4,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub enabled: bool,
    pub views: usize,
    pub sc_bounds: (f64, f64),
    pub t_bounds: (f64, f64),
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        let s = SwarmConfig::default();
        TuningConfig {
            enabled: false,
            views: 10,
            sc_bounds: (0.1, 1.0),
            t_bounds: (0.05, 0.95),
            particles: s.particles,
            iterations: s.iterations,
            inertia: s.inertia,
            cognitive: s.cognitive,
            social: s.social,
        }
    }
}

impl TuningConfig {
    pub fn swarm(&self, seed: u64) -> SwarmConfig {
        SwarmConfig {
            particles: self.particles,
            iterations: self.iterations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            bounds: vec![self.sc_bounds, self.t_bounds],
            seed,
        }
    }
}

/// An evaluation rule: plain prediction or one of the multi-view aggregations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    SingleView,
    MultiView(AggregationKind),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SingleView,
        Method::MultiView(AggregationKind::Mvm),
        Method::MultiView(AggregationKind::ConfidenceSoft),
        Method::MultiView(AggregationKind::CertaintySoft),
        Method::MultiView(AggregationKind::ConfidenceHard),
        Method::MultiView(AggregationKind::CertaintyHard),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SingleView => "single-view",
            Method::MultiView(k) => k.name(),
        }
    }

    /// Aggregation rule with the threshold applied to hard kinds.
    pub fn aggregation(self, threshold: f64) -> Result<Option<AggregationMethod>> {
        match self {
            Method::SingleView => Ok(None),
            Method::MultiView(k) if k.is_hard() => {
                Ok(Some(AggregationMethod::new(k, Some(threshold))?))
            }
            Method::MultiView(k) => Ok(Some(AggregationMethod::soft(k))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "single-view" {
            return Ok(Method::SingleView);
        }
        s.parse().map(Method::MultiView)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Everything needed to reproduce a run. Unknown keys are rejected.
///
/// `train.seed` is ignored by the pipeline: every stage seed is derived from
/// the entries of `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Train, validation and test sizes.
    pub split: [usize; 3],
    pub noise: NoiseConfig,
    /// Per-channel normalization; statistics of the training split when absent.
    pub normalization: Option<(Vec<f64>, Vec<f64>)>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub multiview: MultiviewConfig,
    pub tuning: TuningConfig,
    pub methods: Vec<Method>,
    pub ece_bins: usize,
    pub seeds: Vec<u64>,
    pub write_views: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            split: [2000, 400, 1000],
            noise: NoiseConfig::default(),
            normalization: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            multiview: MultiviewConfig::default(),
            tuning: TuningConfig::default(),
            methods: Method::ALL.to_vec(),
            ece_bins: DEFAULT_ECE_BINS,
            seeds: DEFAULT_SEEDS.to_vec(),
            write_views: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.split.contains(&0) {
            return Err(Error::config("every split must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.noise.rate) {
            return Err(Error::config("noise rate must lie in [0, 1]"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.multiview.views == 0 {
            return Err(Error::config("multiview.views must be positive"));
        }
        if !(self.multiview.sc_test > 0.0 && self.multiview.sc_test <= 1.0) {
            return Err(Error::config("multiview.sc_test must lie in (0, 1]"));
        }
        if !(self.multiview.threshold > 0.0 && self.multiview.threshold < 1.0) {
            return Err(Error::config("multiview.threshold must lie in (0, 1)"));
        }
        if self.ece_bins == 0 {
            return Err(Error::config("ece_bins must be positive"));
        }
        if self.tuning.enabled {
            self.tuning.swarm(0).validate()?;
        }
        self.train.validate()
    }

    pub fn needs_views(&self) -> bool {
        self.methods
            .iter()
            .any(|m| matches!(m, Method::MultiView(_)))
    }
}

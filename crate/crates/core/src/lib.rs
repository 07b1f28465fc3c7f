//! Uncertainty-aware classification under label noise: a two-head perceptron
//! that predicts class probabilities and a log-variance, trained with an
//! uncertainty-aware likelihood, evaluated with multi-view test-time
//! augmentation and tuned with particle swarm optimization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod multiview;
pub mod ndmath;
pub mod pso;
pub mod trainer;

pub use data::{Dataset, LabeledImage, NoiseSpec, SyntheticSpec};
pub use error::{Error, Result};
pub use losses::{LabelVector, LossKind, LossValue};
pub use metrics::MetricsReport;
pub use multiview::{AggregationKind, AggregationMethod, MultiViewSet, ViewPrediction};
pub use ndmath::{Activation, Matrix, Prediction, TwoHeadMlp};
pub use pso::{SwarmConfig, TuneResult};
pub use trainer::{TrainConfig, TrainLog};

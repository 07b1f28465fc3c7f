//! Mini-batch training: Adam with L2 weight decay, a constant-then-linear
//! learning-rate schedule, per-epoch validation and best-validation-loss
//! checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_resized_crop, Dataset};
use crate::error::{Error, Result};
use crate::losses::{smooth_class, BatchLoss, LabelVector, LossKind};
use crate::metrics::accuracy;
use crate::multiview::argmax;
use crate::ndmath::{ForwardCache, GradientSet, TwoHeadMlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Last epoch (1-based) trained at `lr0`; the rate then falls linearly to zero.
    pub decay_start_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the weights instead of through the gradient.
    pub decoupled_weight_decay: bool,
    pub loss_kind: LossKind,
    pub smooth_rate: f64,
    /// Lower bound of the training crop area fraction; `1.0` disables augmentation.
    pub aug_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            lr0: 1e-3,
            decay_start_epoch: 24,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            weight_decay: 0.03,
            decoupled_weight_decay: false,
            loss_kind: LossKind::Uanll,
            smooth_rate: 0.4,
            aug_scale: 0.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::config("lr0 must be positive"));
        }
        if self.decay_start_epoch > self.epochs {
            return Err(Error::config("decay_start_epoch exceeds epochs"));
        }
        if !(0.0..=1.0).contains(&self.smooth_rate) {
            return Err(Error::config("smooth_rate must lie in [0, 1]"));
        }
        if !(self.aug_scale > 0.0 && self.aug_scale <= 1.0) {
            return Err(Error::config("aug_scale must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps_adam > 0.0)
        {
            return Err(Error::config("Adam constants out of range"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: `lr0` up to the decay start, then linear to zero.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.decay_start_epoch || cfg.epochs == cfg.decay_start_epoch {
        return cfg.lr0;
    }
    let remaining = cfg.epochs.saturating_sub(epoch) as f64;
    cfg.lr0 * remaining / (cfg.epochs - cfg.decay_start_epoch) as f64
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &TwoHeadMlp) -> Self {
        AdamState {
            m: GradientSet::zeros_like(model),
            v: GradientSet::zeros_like(model),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with L2 weight decay.
pub fn adam_step(
    model: &mut TwoHeadMlp,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let shapes: Vec<_> = model.tensors().map(|m| m.shape()).collect();
    if grads.shapes() != shapes || state.m.shapes() != shapes || state.v.shapes() != shapes {
        return Err(Error::shape(
            "gradient or optimizer state does not mirror the model",
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let wd = cfg.weight_decay;
    let tensors = model
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().zip(state.v.tensors_mut()));
    for ((w, g), (m, v)) in tensors {
        let w = w.as_mut_slice();
        let g = g.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for k in 0..w.len() {
            let gk = if cfg.decoupled_weight_decay {
                g[k]
            } else {
                g[k] + wd * w[k]
            };
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            if cfg.decoupled_weight_decay {
                w[k] -= lr * wd * w[k];
            }
            w[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        }
    }
    Ok(())
}

/// Losses are those of the end-of-epoch weights on un-augmented data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }
}

pub const TRAINLOG_CSV_HEADER: &str = "epoch,lr,train_loss,val_loss,val_acc";

pub fn write_trainlog_csv<W: std::io::Write>(mut out: W, log: &TrainLog) -> Result<()> {
    writeln!(out, "{TRAINLOG_CSV_HEADER}")?;
    for e in &log.epochs {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.val_acc
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub best_model: TwoHeadMlp,
    pub final_model: TwoHeadMlp,
    pub log: TrainLog,
}

fn targets_for(
    labels: impl Iterator<Item = usize>,
    cfg: &TrainConfig,
    n: usize,
) -> Vec<LabelVector> {
    labels
        .map(|l| smooth_class(l, cfg.smooth_rate, n))
        .collect()
}

fn accumulate(
    model: &TwoHeadMlp,
    caches: &[ForwardCache],
    loss: &BatchLoss,
    grads: &mut GradientSet,
) -> Result<()> {
    for (cache, s) in caches.iter().zip(&loss.samples) {
        match &s.d_logits {
            Some(d) => model.backward_logits_into(cache, d, s.d_s, grads)?,
            None => model.backward_into(cache, &s.d_h, s.d_s, grads)?,
        }
    }
    Ok(())
}

/// Loss (with the training targets) and accuracy (against the raw labels) on un-augmented data.
pub fn evaluate_loss(model: &TwoHeadMlp, ds: &Dataset, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let preds = ds
        .images
        .iter()
        .map(|img| model.predict(&img.pixels))
        .collect::<Result<Vec<_>>>()?;
    let targets = targets_for(ds.images.iter().map(|i| i.label), cfg, ds.num_classes);
    let loss = cfg.loss_kind.evaluate(&targets, &preds)?;
    let classes: Vec<usize> = preds.iter().map(|p| argmax(&p.h)).collect();
    Ok((loss.value, accuracy(&classes, &ds.labels())?))
}

fn check_datasets(train: &Dataset, val: &Dataset, model: &TwoHeadMlp) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(
            "training and validation sets must be non-empty",
        ));
    }
    if train.image_shape() != val.image_shape() || train.num_classes != val.num_classes {
        return Err(Error::shape(
            "training and validation sets disagree in shape",
        ));
    }
    if train.feature_dim() != model.input_dim() || train.num_classes != model.num_classes() {
        return Err(Error::shape(format!(
            "model expects {} features / {} classes, data has {} / {}",
            model.input_dim(),
            model.num_classes(),
            train.feature_dim(),
            train.num_classes
        )));
    }
    Ok(())
}

pub fn train_model(
    train: &Dataset,
    val: &Dataset,
    model_init: &TwoHeadMlp,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model_init.clone();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            best_model: model.clone(),
            final_model: model,
            log,
        });
    }
    check_datasets(train, val, &model)?;
    let n_classes = train.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut grads = GradientSet::zeros_like(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, TwoHeadMlp)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut caches = Vec::with_capacity(batch.len());
            for &i in batch {
                let img = &train.images[i];
                let cache = if cfg.aug_scale < 1.0 {
                    let view = random_resized_crop(img, cfg.aug_scale, &mut rng)?;
                    model.forward(&view.pixels)?
                } else {
                    model.forward(&img.pixels)?
                };
                caches.push(cache);
            }
            let preds: Vec<_> = caches.iter().map(|c| c.prediction.clone()).collect();
            let targets = targets_for(batch.iter().map(|&i| train.images[i].label), cfg, n_classes);
            let loss = cfg.loss_kind.evaluate(&targets, &preds)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss.value,
                });
            }
            grads.clear();
            accumulate(&model, &caches, &loss, &mut grads)?;
            adam_step(&mut model, &grads, &mut adam, lr, cfg)?;
        }
        let (train_loss, _) = evaluate_loss(&model, train, cfg)?;
        let (val_loss, val_acc) = evaluate_loss(&model, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                value: val_loss,
            });
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(v, _)| val_loss < *v) {
            best = Some((val_loss, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_model,
        final_model: model,
        log,
    })
}

/// Kendall rank correlation between position and value; `-1` for a strictly
/// decreasing sequence. Ties count as neither concordant nor discordant.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    score as f64 / (n * (n - 1) / 2) as f64
}

/// Shape of the validation/training curves used to detect overfitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitCheck {
    pub val_min_epoch: usize,
    pub val_min: f64,
    pub val_final: f64,
    /// Rise of the final validation loss above its minimum, relative to the curve's range.
    pub val_rise: f64,
    pub train_tau: f64,
    /// Epoch-to-epoch increases of the training loss.
    pub train_rises: usize,
    pub train_falls_after_min: bool,
    pub detected: bool,
}

/// Validation loss bottoms out before the last epoch and ends more than
/// `rise_tol` (relative to its range) above the minimum, while the training
/// loss follows a decreasing trend (Kendall tau at most `tau_max`) and keeps
/// falling after the validation minimum.
pub fn detect_overfitting(log: &TrainLog, rise_tol: f64, tau_max: f64) -> Option<OverfitCheck> {
    let (min_idx, min_e) = log
        .epochs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss))?;
    let last = log.epochs.last()?;
    let max_val = log
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (max_val - min_e.val_loss).max(f64::MIN_POSITIVE);
    let train: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
    let train_tau = kendall_tau(&train);
    let train_rises = train.windows(2).filter(|w| w[1] > w[0]).count();
    let train_falls_after_min = last.train_loss < min_e.train_loss;
    let val_rise = (last.val_loss - min_e.val_loss) / span;
    Some(OverfitCheck {
        val_min_epoch: min_idx + 1,
        val_min: min_e.val_loss,
        val_final: last.val_loss,
        val_rise,
        train_tau,
        train_rises,
        train_falls_after_min,
        detected: min_idx + 1 < log.epochs.len()
            && val_rise > rise_tol
            && train_tau <= tau_max
            && train_falls_after_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{Activation, Matrix};

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            decay_start_epoch: 80,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = cfg();
        assert_eq!(lr_schedule(1, &c), 0.001);
        assert_eq!(lr_schedule(80, &c), 0.001);
        assert!((lr_schedule(140, &c) - 0.0005).abs() < 1e-18);
        assert_eq!(lr_schedule(200, &c), 0.0);
    }

    fn one_weight(w: f64) -> TwoHeadMlp {
        TwoHeadMlp::from_layers(
            vec![],
            Matrix::from_vec(1, 2, vec![w, -w]).unwrap(),
            Matrix::from_vec(1, 2, vec![0.5 * w, 0.0]).unwrap(),
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut model = one_weight(0.7);
        let before = model.clone();
        let grads = GradientSet::zeros_like(&model);
        let mut st = AdamState::new(&model);
        let c = TrainConfig {
            weight_decay: 0.0,
            ..cfg()
        };
        adam_step(&mut model, &grads, &mut st, 0.001, &c).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = one_weight(0.0);
        let mut grads = GradientSet::zeros_like(&model);
        grads.class_head.set(0, 0, 1.0);
        let mut st = AdamState::new(&model);
        let c = TrainConfig {
            weight_decay: 0.0,
            ..cfg()
        };
        adam_step(&mut model, &grads, &mut st, 0.001, &c).unwrap();
        // m_hat / sqrt(v_hat) = 1, so the step is lr / (1 + eps).
        assert!((model.class_head().get(0, 0) + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut grads = GradientSet::zeros_like(&one_weight(0.3));
        grads.class_head.set(0, 1, -0.4);
        grads.var_head.set(0, 0, 2.0);
        let run = || {
            let mut m = one_weight(0.3);
            let mut st = AdamState::new(&m);
            adam_step(&mut m, &grads, &mut st, 0.01, &cfg()).unwrap();
            adam_step(&mut m, &grads, &mut st, 0.01, &cfg()).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn weight_decay_shrinks_norm() {
        for decoupled in [false, true] {
            let mut model = one_weight(0.8);
            let grads = GradientSet::zeros_like(&model);
            let mut st = AdamState::new(&model);
            let c = TrainConfig {
                weight_decay: 0.1,
                decoupled_weight_decay: decoupled,
                ..cfg()
            };
            let norm =
                |m: &TwoHeadMlp| m.tensors().map(|t| t.frobenius_norm().powi(2)).sum::<f64>();
            let mut prev = norm(&model);
            for _ in 0..20 {
                adam_step(&mut model, &grads, &mut st, 0.01, &c).unwrap();
                let now = norm(&model);
                assert!(now < prev);
                prev = now;
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut model = one_weight(0.1);
        let other = TwoHeadMlp::zeros(&[3], 2, Activation::Tanh).unwrap();
        let grads = GradientSet::zeros_like(&other);
        let mut st = AdamState::new(&model);
        assert!(matches!(
            adam_step(&mut model, &grads, &mut st, 0.1, &cfg()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kendall_tau_extremes() {
        assert_eq!(kendall_tau(&[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau(&[1.0, 1.0]), 0.0);
        assert!((kendall_tau(&[4.0, 2.0, 3.0, 1.0]) + 4.0 / 6.0).abs() < 1e-15);
    }

    fn log_of(train: &[f64], val: &[f64]) -> TrainLog {
        let epochs = train
            .iter()
            .zip(val)
            .enumerate()
            .map(|(i, (&t, &v))| EpochLog {
                epoch: i + 1,
                lr: 0.001,
                train_loss: t,
                val_loss: v,
                val_acc: 0.5,
            })
            .collect();
        TrainLog {
            epochs,
            best_epoch: None,
        }
    }

    #[test]
    fn overfitting_detector() {
        let train = [5.0, 4.0, 3.0, 2.0, 1.0, 0.5];
        let over = detect_overfitting(&log_of(&train, &[3.0, 2.0, 1.5, 2.0, 3.0, 4.0]), 0.1, -0.9)
            .unwrap();
        assert!(over.detected);
        assert_eq!(over.val_min_epoch, 3);
        assert_eq!(over.train_rises, 0);
        let healthy =
            detect_overfitting(&log_of(&train, &[3.0, 2.5, 2.0, 1.8, 1.7, 1.6]), 0.1, -0.9)
                .unwrap();
        assert!(!healthy.detected);
        let flat = detect_overfitting(
            &log_of(&[1.0; 6], &[3.0, 2.0, 1.5, 2.0, 3.0, 4.0]),
            0.1,
            -0.9,
        )
        .unwrap();
        assert!(!flat.detected);
        assert!(detect_overfitting(&TrainLog::default(), 0.1, -0.9).is_none());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr0: 0.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig {
            decay_start_epoch: 201,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            smooth_rate: 1.2,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            aug_scale: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }
}

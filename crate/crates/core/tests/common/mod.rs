//! Helpers shared by the integration tests: random instances and naive
//! reference implementations that do not reuse library internals.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uacls_core::data::{Dataset, LabeledImage};
use uacls_core::losses::{het_regression_loss, LabelVector, LossKind};
use uacls_core::multiview::{MultiViewSet, ViewPrediction};
use uacls_core::ndmath::{
    finite_difference_grad, max_gradient_mismatch, Activation, GradientSet, Matrix, TwoHeadMlp,
};

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A small model with every weight (biases included) drawn uniformly.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    classes: usize,
    act: Activation,
) -> TwoHeadMlp {
    let trunk = dims
        .windows(2)
        .map(|w| random_matrix(rng, w[1], w[0] + 1, 0.8))
        .collect();
    let width = *dims.last().unwrap();
    TwoHeadMlp::from_layers(
        trunk,
        random_matrix(rng, classes, width + 1, 0.8),
        random_matrix(rng, 1, width + 1, 0.5),
        act,
    )
    .unwrap()
}

pub fn random_inputs(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Smoothed one-hot targets at a random rate in [0, 0.5].
pub fn random_targets(rng: &mut ChaCha8Rng, m: usize, classes: usize) -> Vec<LabelVector> {
    let r: f64 = rng.random_range(0.0..0.5);
    (0..m)
        .map(|_| {
            let c = rng.random_range(0..classes);
            let y = (0..classes)
                .map(|k| {
                    if k == c {
                        1.0 - r + r / classes as f64
                    } else {
                        r / classes as f64
                    }
                })
                .collect();
            LabelVector::new(y).unwrap()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCase {
    Loss(LossKind),
    HetRegression,
}

pub const GRAD_CASES: [GradCase; 4] = [
    GradCase::Loss(LossKind::Uanll),
    GradCase::Loss(LossKind::Ablation),
    GradCase::Loss(LossKind::Ce),
    GradCase::HetRegression,
];

/// Batch loss of `model`: classification kinds read `(h, s)`, the regression
/// case reads the single raw logit as the mean and `s` as the log-variance.
fn batch_loss(
    case: GradCase,
    model: &TwoHeadMlp,
    xs: &[Vec<f64>],
    ys: &[LabelVector],
    yr: &[f64],
) -> f64 {
    match case {
        GradCase::Loss(kind) => {
            let preds: Vec<_> = xs.iter().map(|x| model.predict(x).unwrap()).collect();
            kind.evaluate(ys, &preds).unwrap().value
        }
        GradCase::HetRegression => {
            let caches: Vec<_> = xs.iter().map(|x| model.forward(x).unwrap()).collect();
            let h: Vec<f64> = caches.iter().map(|c| c.logits[0]).collect();
            let s: Vec<f64> = caches.iter().map(|c| c.prediction.s).collect();
            het_regression_loss(yr, &h, &s).unwrap().value
        }
    }
}

fn analytic(
    case: GradCase,
    model: &TwoHeadMlp,
    xs: &[Vec<f64>],
    ys: &[LabelVector],
    yr: &[f64],
) -> GradientSet {
    let caches: Vec<_> = xs.iter().map(|x| model.forward(x).unwrap()).collect();
    let mut grads = GradientSet::zeros_like(model);
    match case {
        GradCase::Loss(kind) => {
            let preds: Vec<_> = caches.iter().map(|c| c.prediction.clone()).collect();
            let loss = kind.evaluate(ys, &preds).unwrap();
            for (c, s) in caches.iter().zip(&loss.samples) {
                match &s.d_logits {
                    Some(d) => model.backward_logits_into(c, d, s.d_s, &mut grads).unwrap(),
                    None => model.backward_into(c, &s.d_h, s.d_s, &mut grads).unwrap(),
                }
            }
        }
        GradCase::HetRegression => {
            let h: Vec<f64> = caches.iter().map(|c| c.logits[0]).collect();
            let s: Vec<f64> = caches.iter().map(|c| c.prediction.s).collect();
            let loss = het_regression_loss(yr, &h, &s).unwrap();
            for (c, sv) in caches.iter().zip(&loss.samples) {
                model
                    .backward_logits_into(c, &sv.d_h, sv.d_s, &mut grads)
                    .unwrap();
            }
        }
    }
    grads
}

/// Worst mismatch score (below 1 passes) between backprop and central differences
/// on one random instance.
pub fn gradient_check_instance(case: GradCase, rng: &mut ChaCha8Rng, rel: f64, floor: f64) -> f64 {
    let input = rng.random_range(2..6);
    let depth = rng.random_range(0..3);
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(rng.random_range(2..6));
    }
    let act = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let classes = match case {
        GradCase::HetRegression => 1,
        _ => rng.random_range(2..5),
    };
    let model = random_model(rng, &dims, classes, act);
    let m = rng.random_range(1..5);
    let xs = random_inputs(rng, m, input);
    let ys = random_targets(rng, m, classes);
    let yr: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let a = analytic(case, &model, &xs, &ys, &yr);
    let fd = finite_difference_grad(|mm| batch_loss(case, mm, &xs, &ys, &yr), &model, 1e-5);
    max_gradient_mismatch(&a, &fd, rel, floor)
}

/// Per-class vote counts with ties broken toward the lowest class.
pub fn naive_mode(set: &MultiViewSet, classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for v in &set.views {
        counts[v.pred_class] += 1;
    }
    let mut best = 0;
    for k in 1..classes {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best
}

/// Reference weighted bin count: `z_k = sum_j g_j [y_j = k]`, argmax with
/// lowest-index ties, mode when every weight is zero.
pub fn naive_weighted(
    set: &MultiViewSet,
    classes: usize,
    weight: impl Fn(&ViewPrediction) -> f64,
) -> (usize, bool) {
    let mut z = vec![0.0f64; classes];
    for v in &set.views {
        z[v.pred_class] += weight(v);
    }
    if z.iter().all(|&w| w == 0.0) {
        return (naive_mode(set, classes), true);
    }
    let mut best = 0;
    for k in 1..classes {
        if z[k] > z[best] {
            best = k;
        }
    }
    (best, false)
}

/// Random view sets drawing weights from a coarse grid so that ties are common.
pub fn random_view_set(
    rng: &mut ChaCha8Rng,
    index: usize,
    n: usize,
    classes: usize,
) -> MultiViewSet {
    const GRID: [f64; 5] = [0.2, 0.4, 0.5, 0.6, 0.8];
    let views = (0..n)
        .map(|_| ViewPrediction {
            pred_class: rng.random_range(0..classes),
            confidence: GRID[rng.random_range(0..GRID.len())],
            certainty: GRID[rng.random_range(0..GRID.len())],
            raw: None,
        })
        .collect();
    MultiViewSet {
        sample_index: index,
        views,
    }
}

/// Reference expected calibration error on equal-width bins `(b/B, (b+1)/B]`
/// (zero confidence joins the first bin).
pub fn naive_ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] == 0.0)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / k;
        let mc = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
        total += k / n * (acc - mc).abs();
    }
    total
}

/// Two Gaussian blobs in `dim` dimensions, separated along every axis.
pub fn separable_dataset(rng: &mut ChaCha8Rng, per_class: usize, dim: usize) -> Dataset {
    let mut images = Vec::new();
    for i in 0..2 * per_class {
        let label = i % 2;
        let centre = if label == 0 { -1.0 } else { 1.0 };
        let pixels = (0..dim)
            .map(|_| centre + rng.random_range(-0.5..0.5))
            .collect();
        images.push(LabeledImage::new(1, 1, dim, pixels, label).unwrap());
    }
    Dataset::new(images, 2).unwrap()
}

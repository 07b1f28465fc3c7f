mod common;

use common::{naive_ece, naive_mode, naive_weighted, random_model, random_view_set};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uacls_core::data::{
    decode_dataset, denormalize, encode_cifar10_batch, encode_dataset, inject_asymmetric_noise,
    normalize, parse_cifar10_batch, random_resized_crop, Dataset, LabeledImage, NoiseSpec,
};
use uacls_core::losses::{ablation_loss, smooth_labels, uanll_loss, LabelVector};
use uacls_core::metrics::{accuracy, ece};
use uacls_core::multiview::{
    aggregate_mode, aggregate_weighted, AggregationKind, AggregationMethod,
};
use uacls_core::ndmath::{
    decode_checkpoint, encode_checkpoint, sigmoid, softmax, Activation, Prediction,
};
use uacls_core::pso::{pso_minimize, SwarmConfig};
use uacls_core::trainer::{lr_schedule, TrainConfig};

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, len)
}

fn random_images(
    rng: &mut ChaCha8Rng,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    classes: usize,
) -> Dataset {
    let images = (0..n)
        .map(|_| {
            let px = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            LabeledImage::new(c, h, w, px, rng.random_range(0..classes)).unwrap()
        })
        .collect();
    Dataset::new(images, classes).unwrap()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in finite_vec(1..12)) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn softmax_ignores_shifts(z in finite_vec(1..12), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&z).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_bounded_and_symmetric(x in -800.0f64..800.0) {
        let s = sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothing_keeps_sum_and_argmax(n in 2usize..20, class in 0usize..20, frac in 0.0f64..1.0) {
        let class = class % n;
        let r = frac * (n as f64 - 1.0) / n as f64;
        let y = smooth_labels(&LabelVector::one_hot(class, n).unwrap(), r, n).unwrap();
        let y = y.as_slice();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let top = (0..n).fold(0, |b, k| if y[k] > y[b] { k } else { b });
        prop_assert_eq!(top, class);
    }

    #[test]
    fn uanll_at_zero_log_variance_is_the_ablation_loss(seed in any::<u64>(), m in 1usize..6, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<LabelVector> = (0..m)
            .map(|_| LabelVector::one_hot(rng.random_range(0..n), n).unwrap())
            .collect();
        let preds: Vec<Prediction> = (0..m)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                Prediction::new(softmax(&z).unwrap(), 0.0).unwrap()
            })
            .collect();
        let h: Vec<&[f64]> = preds.iter().map(|p| p.h.as_slice()).collect();
        let u = uanll_loss(&targets, &preds, n).unwrap();
        let a = ablation_loss(&targets, &h).unwrap();
        prop_assert_eq!(u.value.to_bits(), a.value.to_bits());
    }

    #[test]
    fn aggregation_matches_naive_rules(seed in any::<u64>(), n in 1usize..8, classes in 2usize..6, t in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_view_set(&mut rng, 0, n, classes);
        prop_assert_eq!(aggregate_mode(&set), naive_mode(&set, classes));
        for kind in AggregationKind::ALL {
            let method = if kind.is_hard() {
                AggregationMethod::new(kind, Some(t)).unwrap()
            } else {
                AggregationMethod::soft(kind)
            };
            let got = aggregate_weighted(&set, &method, classes).unwrap();
            let want = match kind {
                AggregationKind::Mvm => (naive_mode(&set, classes), false),
                AggregationKind::ConfidenceSoft => naive_weighted(&set, classes, |v| v.confidence),
                AggregationKind::CertaintySoft => naive_weighted(&set, classes, |v| v.certainty),
                AggregationKind::ConfidenceHard => naive_weighted(&set, classes, |v| f64::from(u8::from(v.confidence > t))),
                AggregationKind::CertaintyHard => naive_weighted(&set, classes, |v| f64::from(u8::from(v.certainty > t))),
            };
            prop_assert_eq!((got.class, got.fallback), want, "{:?}", kind);
            prop_assert!(got.confidence > 0.0 && got.confidence <= 1.0);
        }
    }

    #[test]
    fn ece_matches_reference_and_is_bounded(seed in any::<u64>(), len in 1usize..200, bins in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conf: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let correct: Vec<bool> = (0..len).map(|_| rng.random_bool(0.6)).collect();
        let e = ece(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((e - naive_ece(&conf, &correct, bins)).abs() < 1e-12);
    }

    #[test]
    fn single_bin_ece_is_the_global_gap(seed in any::<u64>(), len in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conf: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..=1.0)).collect();
        let correct: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        let preds: Vec<usize> = correct.iter().map(|&c| usize::from(!c)).collect();
        let acc = accuracy(&preds, &vec![0; len]).unwrap();
        let mean_conf = conf.iter().sum::<f64>() / len as f64;
        prop_assert!((ece(&conf, &correct, 1).unwrap() - (acc - mean_conf).abs()).abs() < 1e-12);
    }

    #[test]
    fn swarm_history_never_increases(seed in any::<u64>(), dims in 1usize..4) {
        let cfg = SwarmConfig {
            particles: 8,
            iterations: 15,
            bounds: vec![(-3.0, 2.0); dims],
            seed,
            ..SwarmConfig::default()
        };
        let r = pso_minimize(|x| x.iter().map(|v| (v - 0.7).powi(2) + v.sin()).sum(), &cfg).unwrap();
        prop_assert_eq!(r.history.len(), 16);
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.best_position.iter().all(|&v| (-3.0..=2.0).contains(&v)));
        prop_assert_eq!(*r.history.last().unwrap(), r.best_value);
    }

    #[test]
    fn crops_keep_shape_and_range(seed in any::<u64>(), sc in 0.01f64..=1.0, h in 1usize..12, w in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_images(&mut rng, 1, 2, h, w, 3);
        let img = &ds.images[0];
        let out = random_resized_crop(img, sc, &mut rng).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert_eq!(out.label, img.label);
        let lo = img.pixels.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.pixels.iter().all(|&p| p >= lo - 1e-12 && p <= hi + 1e-12));
    }

    #[test]
    fn normalization_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_images(&mut rng, 5, 3, 4, 4, 2);
        let means = vec![0.4, 0.5, 0.6];
        let stds = vec![0.2, 0.25, 0.3];
        let back = denormalize(&normalize(&ds, &means, &stds).unwrap(), &means, &stds).unwrap();
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_only_moves_labels_within_pairs(seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_images(&mut rng, 60, 1, 2, 2, 5);
        let spec = NoiseSpec { pairs: vec![(0, 1), (2, 3)], rate, seed, direction: Default::default() };
        let noisy = inject_asymmetric_noise(&ds, &spec).unwrap();
        for (a, b) in ds.images.iter().zip(&noisy.images) {
            prop_assert_eq!(&a.pixels, &b.pixels);
            let ok = a.label == b.label
                || matches!((a.label, b.label), (0, 1) | (1, 0) | (2, 3) | (3, 2));
            prop_assert!(ok);
        }
        prop_assert_eq!(noisy.true_labels(), ds.labels());
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.random_range(1..4);
        let dims: Vec<usize> = (0..depth).map(|_| rng.random_range(1..7)).collect();
        let classes = rng.random_range(1..5);
        let model = random_model(&mut rng, &dims, classes, Activation::Relu);
        let back = decode_checkpoint(&encode_checkpoint(&model), Activation::Relu).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn datasets_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_images(&mut rng, 4, 2, 3, 3, 4);
        prop_assert_eq!(decode_dataset(&encode_dataset(&ds).unwrap()).unwrap(), ds);
    }

    #[test]
    fn cifar_records_round_trip(bytes in prop::collection::vec(any::<u8>(), 3072), label in 0u8..10) {
        let mut record = vec![label];
        record.extend_from_slice(&bytes);
        let ds = parse_cifar10_batch(&record).unwrap();
        prop_assert_eq!(encode_cifar10_batch(&ds).unwrap(), record);
    }

    #[test]
    fn learning_rate_is_non_increasing(epochs in 1usize..300, frac in 0.0f64..=1.0) {
        let cfg = TrainConfig {
            epochs,
            decay_start_epoch: (frac * epochs as f64) as usize,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (1..=epochs).map(|e| lr_schedule(e, &cfg)).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs.iter().all(|&l| (0.0..=cfg.lr0).contains(&l)));
    }
}

//! Datasets: synthetic shapes, label noise, augmentation, splits and file formats.

mod augment;
mod cifar;
mod container;
mod noise;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{bilinear_resize, crop, random_resized_crop, substream_seed, view_rng};
pub use cifar::{
    encode_cifar10_batch, load_cifar10_batches, parse_cifar10_batch, CIFAR10_RECORD_LEN,
};
pub use container::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC};
pub use noise::{inject_asymmetric_noise, FlipDirection, NoiseSpec};
pub use synthetic::{gen_synthetic_shapes, render_template, SyntheticSpec, TEMPLATE_COUNT};

/// One image (channels × height × width, row-major per channel) and its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl LabeledImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        label: usize,
    ) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::shape(format!(
                "image {channels}x{height}x{width} needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(LabeledImage {
            channels,
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub num_classes: usize,
    /// Ground-truth labels kept alongside noisy ones.
    pub clean_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>, num_classes: usize) -> Result<Self> {
        let ds = Dataset {
            images,
            num_classes,
            clean_labels: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.images.first() {
            let shape = first.shape();
            for (i, img) in self.images.iter().enumerate() {
                if img.shape() != shape {
                    return Err(Error::shape(format!("image {i} has a different shape")));
                }
                if img.pixels.len() != shape.0 * shape.1 * shape.2 {
                    return Err(Error::shape(format!("image {i} pixel count mismatch")));
                }
                if img.label >= self.num_classes {
                    return Err(Error::shape(format!(
                        "image {i} label {} out of range 0..{}",
                        img.label, self.num_classes
                    )));
                }
            }
        }
        if let Some(clean) = &self.clean_labels {
            if clean.len() != self.images.len() {
                return Err(Error::shape("clean labels length mismatch"));
            }
            if clean.iter().any(|&l| l >= self.num_classes) {
                return Err(Error::shape("clean label out of range"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(LabeledImage::shape)
    }

    pub fn feature_dim(&self) -> usize {
        self.image_shape().map_or(0, |(c, h, w)| c * h * w)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    /// Ground truth: the clean labels when noise was injected, otherwise the labels.
    pub fn true_labels(&self) -> Vec<usize> {
        self.clean_labels.clone().unwrap_or_else(|| self.labels())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            num_classes: self.num_classes,
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Per-channel mean and (population) standard deviation over a dataset.
pub fn channel_stats(ds: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, h, w) = ds
        .image_shape()
        .ok_or_else(|| Error::config("cannot compute statistics of an empty dataset"))?;
    let plane = h * w;
    let count = (plane * ds.len()) as f64;
    let mut means = vec![0.0; c];
    for img in &ds.images {
        for (ch, m) in means.iter_mut().enumerate() {
            *m += img.pixels[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
        }
    }
    means.iter_mut().for_each(|m| *m /= count);
    let mut vars = vec![0.0; c];
    for img in &ds.images {
        for ch in 0..c {
            vars[ch] += img.pixels[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|v| (v - means[ch]).powi(2))
                .sum::<f64>();
        }
    }
    let stds = vars.iter().map(|v| (v / count).sqrt()).collect();
    Ok((means, stds))
}

fn check_channel_params(ds: &Dataset, means: &[f64], stds: &[f64]) -> Result<()> {
    let c = ds.image_shape().map_or(means.len(), |s| s.0);
    if means.len() != c || stds.len() != c {
        return Err(Error::shape(format!(
            "expected {c} per-channel means and stds"
        )));
    }
    if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("standard deviations must be positive"));
    }
    Ok(())
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(ds: &Dataset, means: &[f64], stds: &[f64]) -> Result<Dataset> {
    check_channel_params(ds, means, stds)?;
    Ok(map_channels(ds, |ch, v| (v - means[ch]) / stds[ch]))
}

/// Inverse of [`normalize`].
pub fn denormalize(ds: &Dataset, means: &[f64], stds: &[f64]) -> Result<Dataset> {
    check_channel_params(ds, means, stds)?;
    Ok(map_channels(ds, |ch, v| v * stds[ch] + means[ch]))
}

fn map_channels(ds: &Dataset, f: impl Fn(usize, f64) -> f64) -> Dataset {
    let mut out = ds.clone();
    for img in &mut out.images {
        let plane = img.height * img.width;
        for (k, v) in img.pixels.iter_mut().enumerate() {
            *v = f(k / plane, *v);
        }
    }
    out
}

/// Shuffles deterministically and cuts `[train, val, test]` disjoint splits.
///
/// The test split receives ground-truth labels and no `clean_labels` side list.
pub fn split_dataset(
    ds: &Dataset,
    sizes: [usize; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let total: usize = sizes.iter().sum();
    if total > ds.len() {
        return Err(Error::config(format!(
            "split sizes sum to {total} but dataset has {} samples",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (train, rest) = idx.split_at(sizes[0]);
    let (val, rest) = rest.split_at(sizes[1]);
    let test = &rest[..sizes[2]];
    let mut test_ds = ds.subset(test);
    if let Some(clean) = test_ds.clean_labels.take() {
        for (img, l) in test_ds.images.iter_mut().zip(clean) {
            img.label = l;
        }
    }
    Ok((ds.subset(train), ds.subset(val), test_ds))
}

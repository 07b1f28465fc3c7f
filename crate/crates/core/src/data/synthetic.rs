//! Procedural shape images used as a small stand-in for natural image datasets.
//!
//! Classes come in visually similar pairs: `(disk, ring)`, `(plus, cross)`,
//! `(square, frame)`, `(horizontal stripes, vertical stripes)`,
//! `(triangle up, triangle down)`. Pair-flip noise over `(2k, 2k+1)` therefore
//! corrupts labels between look-alike classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub const TEMPLATE_COUNT: usize = 10;

/// Relative shape radius of the canonical (un-jittered) rendering.
const BASE_RADIUS: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Strength of position/scale randomization; 0 renders every shape canonically.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_jitter() -> f64 {
    1.0
}

fn default_channels() -> usize {
    1
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            per_class: 850,
            side: 16,
            noise_std: 0.35,
            seed: 7,
            jitter: 1.0,
            channels: 1,
        }
    }
}

fn inside(class: usize, u: f64, v: f64) -> bool {
    let bar =
        |a: f64, b: f64| (a.abs() <= 0.3 && b.abs() <= 1.0) || (b.abs() <= 0.3 && a.abs() <= 1.0);
    let r2 = u * u + v * v;
    let in_box = u.abs() <= 1.0 && v.abs() <= 1.0;
    match class {
        0 => r2 <= 1.0,
        1 => (0.5 * 0.5..=1.0).contains(&r2),
        2 => bar(u, v),
        3 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            bar((u + v) * s, (u - v) * s)
        }
        4 => u.abs() <= 0.85 && v.abs() <= 0.85,
        5 => u.abs() <= 0.85 && v.abs() <= 0.85 && (u.abs() > 0.45 || v.abs() > 0.45),
        6 => in_box && ((v + 1.0) * 2.0).floor() as i64 % 2 == 0,
        7 => in_box && ((u + 1.0) * 2.0).floor() as i64 % 2 == 0,
        8 => v.abs() <= 1.0 && u.abs() <= (v + 1.0) / 2.0,
        9 => v.abs() <= 1.0 && u.abs() <= (1.0 - v) / 2.0,
        _ => false,
    }
}

/// Renders template `class` as a binary `side × side` plane centered at
/// `(cx, cy)` (pixel units) with radius `radius`.
pub fn render_template(class: usize, side: usize, cx: f64, cy: f64, radius: f64) -> Vec<f64> {
    let mut plane = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5 - cx) / radius;
            let v = (y as f64 + 0.5 - cy) / radius;
            plane.push(if inside(class, u, v) { 1.0 } else { 0.0 });
        }
    }
    plane
}

/// Deterministic synthetic dataset with `per_class` samples of each class.
pub fn gen_synthetic_shapes(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::config("need at least two classes"));
    }
    if spec.num_classes > TEMPLATE_COUNT {
        return Err(Error::config(format!(
            "{} classes requested but only {TEMPLATE_COUNT} templates exist",
            spec.num_classes
        )));
    }
    if spec.side < 8 {
        return Err(Error::config("image side must be at least 8 pixels"));
    }
    if spec.channels == 0 {
        return Err(Error::config("images need at least one channel"));
    }
    if !(spec.noise_std >= 0.0) || !(0.0..=1.0).contains(&spec.jitter) {
        return Err(Error::config("noise_std must be >= 0 and jitter in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let side = spec.side as f64;
    let mut images = Vec::with_capacity(spec.num_classes * spec.per_class);
    for _ in 0..spec.per_class {
        for class in 0..spec.num_classes {
            let radius = side * (BASE_RADIUS + spec.jitter * rng.random_range(-0.1..0.07));
            let margin = (side / 2.0 - radius).max(0.0);
            let mut offset = || {
                if margin > 0.0 {
                    spec.jitter * rng.random_range(-margin..margin)
                } else {
                    0.0
                }
            };
            let cx = side / 2.0 + offset();
            let cy = side / 2.0 + offset();
            let plane = render_template(class, spec.side, cx, cy, radius);
            let mut pixels = Vec::with_capacity(plane.len() * spec.channels);
            for _ in 0..spec.channels {
                for &p in &plane {
                    let v = if spec.noise_std > 0.0 {
                        p + noise.sample(&mut rng)
                    } else {
                        p
                    };
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
            images.push(LabeledImage::new(
                spec.channels,
                spec.side,
                spec.side,
                pixels,
                class,
            )?);
        }
    }
    Dataset::new(images, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            per_class: 5,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            gen_synthetic_shapes(&spec).unwrap(),
            gen_synthetic_shapes(&spec).unwrap()
        );
        let other = SyntheticSpec {
            seed: 8,
            ..spec.clone()
        };
        assert_ne!(
            gen_synthetic_shapes(&spec).unwrap(),
            gen_synthetic_shapes(&other).unwrap()
        );
    }

    #[test]
    fn noiseless_canonical_rendering_is_the_template() {
        let spec = SyntheticSpec {
            num_classes: 10,
            per_class: 1,
            side: 12,
            noise_std: 0.0,
            seed: 1,
            jitter: 0.0,
            channels: 1,
        };
        let ds = gen_synthetic_shapes(&spec).unwrap();
        for img in &ds.images {
            let t = render_template(img.label, 12, 6.0, 6.0, 12.0 * BASE_RADIUS);
            assert_eq!(img.pixels, t);
        }
        // Paired templates differ from each other.
        for k in (0..10).step_by(2) {
            assert_ne!(ds.images[k].pixels, ds.images[k + 1].pixels);
        }
    }

    #[test]
    fn noiseless_pixels_are_binary() {
        let spec = SyntheticSpec {
            per_class: 3,
            noise_std: 0.0,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic_shapes(&spec).unwrap();
        assert!(ds
            .images
            .iter()
            .flat_map(|i| &i.pixels)
            .all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn config_errors() {
        for bad in [
            SyntheticSpec {
                num_classes: 11,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                num_classes: 1,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                side: 7,
                ..SyntheticSpec::default()
            },
        ] {
            assert!(matches!(gen_synthetic_shapes(&bad), Err(Error::Config(_))));
        }
    }
}

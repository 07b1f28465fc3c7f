use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledImage;
use crate::error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the random stream for view `j` of sample `i`: `seed ⊕ hash(i, j)`.
pub fn substream_seed(seed: u64, i: u64, j: u64) -> u64 {
    seed ^ splitmix64(splitmix64(i) ^ j.rotate_left(32))
}

pub fn view_rng(seed: u64, i: u64, j: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, i, j))
}

/// Square-aspect random crop resized back to the original size.
///
/// The crop keeps a fraction of the image area drawn uniformly from `[sc, 1]`,
/// sits at a uniformly random integer offset, and is never smaller than one pixel.
pub fn random_resized_crop<R: Rng + ?Sized>(
    img: &LabeledImage,
    sc: f64,
    rng: &mut R,
) -> Result<LabeledImage> {
    if !(sc > 0.0 && sc <= 1.0) {
        return Err(Error::domain(format!("crop scale {sc} outside (0, 1]")));
    }
    let area = if sc < 1.0 {
        rng.random_range(sc..=1.0)
    } else {
        1.0
    };
    let side = area.sqrt();
    let ch = ((img.height as f64 * side).round() as usize).clamp(1, img.height);
    let cw = ((img.width as f64 * side).round() as usize).clamp(1, img.width);
    let y0 = rng.random_range(0..=img.height - ch);
    let x0 = rng.random_range(0..=img.width - cw);
    let patch = crop(img, y0, x0, ch, cw)?;
    Ok(bilinear_resize(&patch, img.height, img.width))
}

pub fn crop(img: &LabeledImage, y0: usize, x0: usize, h: usize, w: usize) -> Result<LabeledImage> {
    if h == 0 || w == 0 || y0 + h > img.height || x0 + w > img.width {
        return Err(Error::shape("crop window outside the image"));
    }
    let mut pixels = Vec::with_capacity(img.channels * h * w);
    for c in 0..img.channels {
        for y in y0..y0 + h {
            let start = (c * img.height + y) * img.width + x0;
            pixels.extend_from_slice(&img.pixels[start..start + w]);
        }
    }
    LabeledImage::new(img.channels, h, w, pixels, img.label)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// Interpolation is written as nested lerps so constant regions stay bit-exact.
pub fn bilinear_resize(img: &LabeledImage, out_h: usize, out_w: usize) -> LabeledImage {
    if out_h == img.height && out_w == img.width {
        return img.clone();
    }
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let taps = |n_out: usize, scale: f64, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, sy, img.height);
    let xs = taps(out_w, sx, img.width);
    let mut pixels = Vec::with_capacity(img.channels * out_h * out_w);
    for c in 0..img.channels {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let a = img.at(c, y0, x0);
                let b = img.at(c, y0, x1);
                let top = a + (b - a) * fx;
                let d = img.at(c, y1, x0);
                let e = img.at(c, y1, x1);
                let bottom = d + (e - d) * fx;
                pixels.push(top + (bottom - top) * fy);
            }
        }
    }
    LabeledImage {
        channels: img.channels,
        height: out_h,
        width: out_w,
        pixels,
        label: img.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(side: usize) -> LabeledImage {
        let pixels = (0..side * side)
            .map(|k| k as f64 / (side * side) as f64)
            .collect();
        LabeledImage::new(1, side, side, pixels, 3).unwrap()
    }

    #[test]
    fn full_scale_is_identity() {
        let img = ramp(9);
        let mut rng = view_rng(1, 0, 0);
        for _ in 0..5 {
            assert_eq!(random_resized_crop(&img, 1.0, &mut rng).unwrap(), img);
        }
    }

    #[test]
    fn shape_label_and_range_preserved() {
        let img = ramp(12);
        let mut rng = view_rng(7, 1, 2);
        for sc in [0.01, 0.1, 0.4, 0.9] {
            let out = random_resized_crop(&img, sc, &mut rng).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert_eq!(out.label, 3);
            assert!(out.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = LabeledImage::new(2, 10, 10, vec![0.37; 200], 0).unwrap();
        let mut rng = view_rng(3, 0, 0);
        for sc in [0.05, 0.3, 0.77] {
            let out = random_resized_crop(&img, sc, &mut rng).unwrap();
            assert!(out.pixels.iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn rejects_bad_scale() {
        let img = ramp(4);
        let mut rng = view_rng(0, 0, 0);
        assert!(random_resized_crop(&img, 0.0, &mut rng).is_err());
        assert!(random_resized_crop(&img, 1.5, &mut rng).is_err());
    }

    #[test]
    fn tiny_scale_keeps_shape() {
        let img = ramp(3);
        let mut rng = view_rng(5, 0, 0);
        let out = random_resized_crop(&img, 1e-6, &mut rng).unwrap();
        assert_eq!(out.shape(), (1, 3, 3));
        let one = crop(&img, 1, 2, 1, 1).unwrap();
        let up = bilinear_resize(&one, 3, 3);
        assert!(up.pixels.iter().all(|&v| v == img.at(0, 1, 2)));
    }

    #[test]
    fn substreams_differ() {
        assert_ne!(substream_seed(1, 0, 1), substream_seed(1, 1, 0));
        assert_ne!(substream_seed(1, 2, 3), substream_seed(2, 2, 3));
        assert_eq!(substream_seed(4, 5, 6), substream_seed(4, 5, 6));
    }
}

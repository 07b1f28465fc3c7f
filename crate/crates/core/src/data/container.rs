//! `UDAT0001` dataset cache files.
//!
//! Header: magic, then `u32` LE count, channels, height, width, class count,
//! then a `u8` flag for clean labels. Each record is a `u32` label, an optional
//! `u32` clean label, and `channels*height*width` little-endian `f64` pixels.

use std::path::Path;

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"UDAT0001";

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let (c, h, w) = ds.image_shape().unwrap_or((0, 0, 0));
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    for v in [ds.len(), c, h, w, ds.num_classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(ds.clean_labels.is_some() as u8);
    for (i, img) in ds.images.iter().enumerate() {
        out.extend_from_slice(&(img.label as u32).to_le_bytes());
        if let Some(clean) = &ds.clean_labels {
            out.extend_from_slice(&(clean[i] as u32).to_le_bytes());
        }
        for p in &img.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("dataset file truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != DATASET_MAGIC {
        return Err(Error::format("bad dataset magic"));
    }
    let mut header = [0usize; 5];
    for v in &mut header {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [count, c, h, w, num_classes] = header;
    let has_clean = match take(1)?[0] {
        0 => false,
        1 => true,
        f => return Err(Error::format(format!("bad clean-label flag {f}"))),
    };
    let plane = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("image shape overflows"))?;
    let mut images = Vec::with_capacity(count.min(1 << 20));
    let mut clean = has_clean.then(Vec::new);
    for _ in 0..count {
        let label = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if let Some(cl) = clean.as_mut() {
            cl.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let raw = take(
            plane
                .checked_mul(8)
                .ok_or_else(|| Error::format("image too large"))?,
        )?;
        let pixels = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        images.push(LabeledImage::new(c, h, w, pixels, label)?);
    }
    if pos != bytes.len() {
        return Err(Error::format("trailing bytes after dataset"));
    }
    let ds = Dataset {
        images,
        num_classes,
        clean_labels: clean,
    };
    ds.validate().map_err(|e| Error::format(e.to_string()))?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_shapes, inject_asymmetric_noise, NoiseSpec, SyntheticSpec};

    #[test]
    fn round_trip_with_clean_labels() {
        let ds = gen_synthetic_shapes(&SyntheticSpec {
            per_class: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let noisy = inject_asymmetric_noise(&ds, &NoiseSpec::adjacent_pairs(4, 0.5, 3)).unwrap();
        let bytes = encode_dataset(&noisy).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), noisy);
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
    }
}

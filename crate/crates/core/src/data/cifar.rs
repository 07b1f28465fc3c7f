//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes (row-major 32×32 planes).

use std::path::Path;

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};

pub const CIFAR10_RECORD_LEN: usize = 3073;
const SIDE: usize = 32;
const CLASSES: usize = 10;

pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_LEN) {
        return Err(Error::format(format!(
            "batch length {} is not a multiple of {CIFAR10_RECORD_LEN}",
            bytes.len()
        )));
    }
    let images = bytes
        .chunks_exact(CIFAR10_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label >= CLASSES {
                return Err(Error::format(format!("record {i} has label byte {label}")));
            }
            let pixels = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
            LabeledImage::new(3, SIDE, SIDE, pixels, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, CLASSES)
}

/// Writes a dataset of 3×32×32 images back into the binary batch format.
///
/// Pixels must be exact multiples of 1/255 (as produced by the parser).
pub fn encode_cifar10_batch(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.len() * CIFAR10_RECORD_LEN);
    for (i, img) in ds.images.iter().enumerate() {
        if img.shape() != (3, SIDE, SIDE) || img.label >= CLASSES {
            return Err(Error::format(format!("image {i} is not a CIFAR-10 record")));
        }
        out.push(img.label as u8);
        for &p in &img.pixels {
            let b = (p * 255.0).round();
            if !(0.0..=255.0).contains(&b) || b / 255.0 != p {
                return Err(Error::format(format!("image {i} has a non-byte pixel {p}")));
            }
            out.push(b as u8);
        }
    }
    Ok(out)
}

/// Reads and concatenates several batch files.
pub fn load_cifar10_batches<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    for p in paths {
        images.extend(parse_cifar10_batch(&std::fs::read(p)?)?.images);
    }
    Dataset::new(images, CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR10_RECORD_LEN];
        r[0] = label;
        r
    }

    #[test]
    fn single_record_fixture() {
        let mut bytes = record(7, 0);
        bytes[1] = 255;
        let ds = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.images[0].label, 7);
        assert_eq!(ds.images[0].at(0, 0, 0), 1.0);
        assert_eq!(ds.images[0].at(0, 0, 1), 0.0);
    }

    #[test]
    fn empty_batch() {
        assert!(parse_cifar10_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(
            parse_cifar10_batch(&[0u8; 3072]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_cifar10_batch(&record(10, 1)),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn two_record_round_trip() {
        let mut bytes = record(3, 17);
        bytes
            .extend((0..CIFAR10_RECORD_LEN).map(|k| if k == 0 { 9 } else { (k * 31 % 256) as u8 }));
        let ds = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(encode_cifar10_batch(&ds).unwrap(), bytes);
    }
}

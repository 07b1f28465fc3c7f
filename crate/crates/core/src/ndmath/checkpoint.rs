//! Binary model checkpoints.
//!
//! Layout, all integers `u32` little-endian and all weights `f64` little-endian:
//!
//! ```text
//! "UCLS0001" | layer count | { rows | cols | rows*cols weights (row-major) }*
//! ```
//!
//! Trunk layers come first, then the class head, then the variance head.
//! The activation is not part of the binary and travels in the sidecar JSON.

use std::path::Path;

use super::activation::Activation;
use super::matrix::Matrix;
use super::mlp::TwoHeadMlp;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UCLS0001";

pub fn encode_checkpoint(model: &TwoHeadMlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_params() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let count = model.tensors().count() as u32;
    out.extend_from_slice(&count.to_le_bytes());
    for m in model.tensors() {
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], activation: Activation) -> Result<TwoHeadMlp> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let count = r.u32()? as usize;
    if count < 2 {
        return Err(Error::format("checkpoint needs at least the two heads"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format("layer size overflows"))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        layers.push(Matrix::from_vec(rows, cols, data).map_err(|e| Error::format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    let var_head = layers.pop().unwrap();
    let class_head = layers.pop().unwrap();
    TwoHeadMlp::from_layers(layers, class_head, var_head, activation)
        .map_err(|e| Error::format(e.to_string()))
}

pub fn save_checkpoint(model: &TwoHeadMlp, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, activation: Activation) -> Result<TwoHeadMlp> {
    decode_checkpoint(&std::fs::read(path)?, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = TwoHeadMlp::init_uniform(&[6, 5, 4], 3, Activation::Tanh, &mut rng).unwrap();
        let bytes = encode_checkpoint(&model);
        let back = decode_checkpoint(&bytes, Activation::Tanh).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(&bytes[..8], b"UCLS0001");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    }

    #[test]
    fn rejects_corrupt_bytes() {
        let model = TwoHeadMlp::zeros(&[2, 2], 2, Activation::Relu).unwrap();
        let bytes = encode_checkpoint(&model);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1], Activation::Relu),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, Activation::Relu).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra, Activation::Relu).is_err());
    }
}

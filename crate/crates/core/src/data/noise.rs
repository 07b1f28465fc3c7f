use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDirection {
    /// Both members of a pair flip to each other.
    #[default]
    Both,
    /// Only the first member of each pair flips to the second.
    FirstToSecond,
}

/// Pair-flip label corruption between designated class pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pairs: Vec<(usize, usize)>,
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub direction: FlipDirection,
}

impl NoiseSpec {
    /// Pairs `(0,1), (2,3), …` covering the first `2 * floor(N/2)` classes.
    pub fn adjacent_pairs(num_classes: usize, rate: f64, seed: u64) -> Self {
        NoiseSpec {
            pairs: (0..num_classes / 2).map(|k| (2 * k, 2 * k + 1)).collect(),
            rate,
            seed,
            direction: FlipDirection::Both,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "noise rate {} outside [0, 1]",
                self.rate
            )));
        }
        let mut seen = vec![false; num_classes];
        for &(a, b) in &self.pairs {
            if a >= num_classes || b >= num_classes {
                return Err(Error::config(format!("pair ({a}, {b}) out of range")));
            }
            if a == b || seen[a] || seen[b] {
                return Err(Error::config(format!(
                    "pair ({a}, {b}) overlaps another pair"
                )));
            }
            seen[a] = true;
            seen[b] = true;
        }
        Ok(())
    }

    fn partner_table(&self, num_classes: usize) -> Vec<Option<usize>> {
        let mut partner = vec![None; num_classes];
        for &(a, b) in &self.pairs {
            partner[a] = Some(b);
            if self.direction == FlipDirection::Both {
                partner[b] = Some(a);
            }
        }
        partner
    }
}

/// Flips each paired label to its partner with probability `rate`.
///
/// Pixels are untouched and the original labels are kept in `clean_labels`.
pub fn inject_asymmetric_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    spec.validate(ds.num_classes)?;
    let partner = spec.partner_table(ds.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = ds.clone();
    let clean = ds.true_labels();
    for img in &mut out.images {
        if let Some(p) = partner[img.label] {
            if rng.random::<f64>() < spec.rate {
                img.label = p;
            }
        }
    }
    out.clean_labels = Some(clean);
    Ok(out)
}

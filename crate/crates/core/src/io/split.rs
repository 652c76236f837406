//! Seeded image-level train/calibration/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ScoreMapSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitSpec {
    pub fn new(seed: u64, ratios: [f64; 3]) -> Result<Self> {
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split ratios must be nonnegative and sum to 1, got {ratios:?}"
            )));
        }
        Ok(SplitSpec { seed, ratios })
    }

    /// Partition sizes for `n` images: `floor(ratio * n)` for each part, with
    /// the rounding remainder going to the last part whose ratio is nonzero.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let mut sizes = self
            .ratios
            .map(|r| ((r * n as f64) + 1e-9).floor().min(n as f64) as usize);
        let taken: usize = sizes.iter().sum();
        let last = self.ratios.iter().rposition(|&r| r > 0.0).unwrap_or(0);
        if taken <= n {
            sizes[last] += n - taken;
        } else {
            // Only reachable through the epsilon guard on pathological ratios.
            sizes[last] -= taken - n;
        }
        sizes
    }
}

/// Permutes images with a ChaCha8 generator seeded from `spec.seed` and cuts
/// the permutation into (train, calibration, test).
pub fn split(set: &ScoreMapSet, spec: &SplitSpec) -> Result<(ScoreMapSet, ScoreMapSet, ScoreMapSet)> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let [a, b, _] = spec.sizes(set.len());
    Ok((
        set.select(&order[..a]),
        set.select(&order[a..a + b]),
        set.select(&order[a + b..]),
    ))
}

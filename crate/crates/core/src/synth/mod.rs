//! Synthetic bi-normal score maps and their closed-form predictions.
//!
//! Latent scores are `N(0, 1)` for negatives and `N(mu1, 1)` for positives,
//! mapped to `[0, 1]` by a logistic link. The link is strictly increasing, so
//! every rank-based quantity (order-statistic thresholds, AUROC, set size at
//! a calibrated threshold) can be computed in latent space.

mod mc;

pub use self::mc::{
    collapse_frontier, mc_fnr_guarantee, mc_set_size, mc_threeway_check, FrontierPoint, McOutcome,
    McResult, McSpec, SetSizeMc, ThreeWayMc,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{PixelLabel, ScoreMap, ScoreMapSet};
use crate::error::{Error, Result};

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Link {
    /// `score = 1 / (1 + exp(-(z + logit_offset)))`
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiNormalModel {
    pub mu1: f64,
    pub pi1: f64,
    pub link: Link,
    /// Shift applied to latent scores before the link. Negative offsets mimic
    /// models trained on rare positives, whose probabilities sit near zero.
    /// Rank-based quantities do not depend on it.
    #[serde(default)]
    pub logit_offset: f64,
}

impl BiNormalModel {
    pub fn new(mu1: f64, pi1: f64) -> Result<Self> {
        if !mu1.is_finite() {
            return Err(Error::InvalidParameter(format!("mu1 = {mu1}")));
        }
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prevalence {pi1} must lie in (0, 1)"
            )));
        }
        Ok(BiNormalModel {
            mu1,
            pi1,
            link: Link::Logistic,
            logit_offset: 0.0,
        })
    }

    pub fn with_logit_offset(mut self, offset: f64) -> Result<Self> {
        if !offset.is_finite() {
            return Err(Error::InvalidParameter(format!("logit offset {offset}")));
        }
        self.logit_offset = offset;
        Ok(self)
    }

    pub fn with_prevalence(self, pi1: f64) -> Result<Self> {
        BiNormalModel::new(self.mu1, pi1)?.with_logit_offset(self.logit_offset)
    }

    /// `Phi(mu1 / sqrt(2))`.
    pub fn implied_auroc(&self) -> f64 {
        norm_cdf(self.mu1 / std::f64::consts::SQRT_2)
    }

    pub fn link_score(&self, latent: f64) -> f32 {
        match self.link {
            Link::Logistic => (1.0 / (1.0 + (-(latent + self.logit_offset)).exp())) as f32,
        }
    }
}

/// `mu1 = sqrt(2) * Phi^-1(auroc)`.
pub fn model_from_auroc(auroc: f64, pi1: f64) -> Result<BiNormalModel> {
    if !(0.5..1.0).contains(&auroc) {
        return Err(Error::AurocOutOfRange(auroc));
    }
    BiNormalModel::new(std::f64::consts::SQRT_2 * norm_quantile(auroc), pi1)
}

/// Draws one set with positives labelled at rate `pi1` (which may differ from
/// `model.pi1` to simulate deployment-time prevalence shift).
pub(crate) fn generate_with<R: Rng>(
    model: &BiNormalModel,
    pi1: f64,
    n_images: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<ScoreMapSet> {
    let n = height * width;
    let mut maps = Vec::with_capacity(n_images);
    for id in 0..n_images {
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let positive = rng.random::<f64>() < pi1;
            let z: f64 = rng.sample(StandardNormal);
            let latent = if positive { z + model.mu1 } else { z };
            scores.push(model.link_score(latent));
            labels.push(if positive {
                PixelLabel::Positive
            } else {
                PixelLabel::Negative
            });
        }
        let id = u32::try_from(id)
            .map_err(|_| Error::InvalidParameter("too many images".into()))?;
        maps.push(ScoreMap::new(id, height, width, scores, labels)?);
    }
    ScoreMapSet::new(maps)
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. pixels from `model`; deterministic for a given seed.
pub fn generate(
    model: &BiNormalModel,
    n_images: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<ScoreMapSet> {
    if n_images == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "need positive dimensions, got {n_images} images of {height}x{width}"
        )));
    }
    generate_with(model, model.pi1, n_images, height, width, &mut stream_rng(seed, 0))
}

/// Expected fraction of pixels flagged by the order-statistic FNR threshold:
/// `pi1 (1 - alpha) + pi0 (1 - Phi(mu1 + Phi^-1(alpha)))`.
pub fn closed_form_set_size(model: &BiNormalModel, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let (pi1, pi0) = (model.pi1, 1.0 - model.pi1);
    Ok(pi1 * (1.0 - alpha) + pi0 * (1.0 - norm_cdf(model.mu1 + norm_quantile(alpha))))
}

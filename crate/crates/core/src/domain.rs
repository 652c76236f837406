//! Value types shared by every module.
//!
//! A pixel is *valid* iff its label is not [`PixelLabel::NoData`]. Validity is
//! always derived from the label; there is no separate mask to fall out of
//! sync with it.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth label of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum PixelLabel {
    NoData = -1,
    Negative = 0,
    Positive = 1,
}

impl PixelLabel {
    pub fn as_i8(self) -> i8 {
        self as i8
    }

    pub fn is_valid(self) -> bool {
        self != PixelLabel::NoData
    }

    pub fn is_positive(self) -> bool {
        self == PixelLabel::Positive
    }
}

impl TryFrom<i64> for PixelLabel {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            -1 => Ok(PixelLabel::NoData),
            0 => Ok(PixelLabel::Negative),
            1 => Ok(PixelLabel::Positive),
            other => Err(Error::BadLabel(other)),
        }
    }
}

impl TryFrom<i8> for PixelLabel {
    type Error = Error;

    fn try_from(value: i8) -> Result<Self> {
        PixelLabel::try_from(i64::from(value))
    }
}

/// Per-pixel probabilities and labels for one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    image_id: u32,
    height: usize,
    width: usize,
    scores: Vec<f32>,
    labels: Vec<PixelLabel>,
}

impl ScoreMap {
    pub fn new(
        image_id: u32,
        height: usize,
        width: usize,
        scores: Vec<f32>,
        labels: Vec<PixelLabel>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {image_id} has zero-sized grid {height}x{width}"
            )));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::DimensionMismatch("grid size overflows".into()))?;
        if scores.len() != n || labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "image {image_id}: {height}x{width} grid but {} scores and {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some((index, &s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::ScoreOutOfRange {
                image_id,
                index,
                score: f64::from(s),
            });
        }
        Ok(ScoreMap {
            image_id,
            height,
            width,
            scores,
            labels,
        })
    }

    pub fn image_id(&self) -> u32 {
        self.image_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn labels(&self) -> &[PixelLabel] {
        &self.labels
    }

    /// `(score, is_positive)` for every valid pixel.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (f32, bool)> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| l.is_valid())
            .map(|(&s, l)| (s, l.is_positive()))
    }

    pub fn count_valid(&self) -> usize {
        self.labels.iter().filter(|l| l.is_valid()).count()
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }
}

/// An ordered collection of equally sized score maps with unique image ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreMapSet {
    maps: Vec<ScoreMap>,
}

impl ScoreMapSet {
    pub fn new(maps: Vec<ScoreMap>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(maps.len());
        if let Some(first) = maps.first() {
            let dims = (first.height, first.width);
            for m in &maps {
                if (m.height, m.width) != dims {
                    return Err(Error::DimensionMismatch(format!(
                        "image {} is {}x{}, set is {}x{}",
                        m.image_id, m.height, m.width, dims.0, dims.1
                    )));
                }
                if !seen.insert(m.image_id) {
                    return Err(Error::DuplicateImageId(m.image_id));
                }
            }
        }
        Ok(ScoreMapSet { maps })
    }

    pub fn maps(&self) -> &[ScoreMap] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<ScoreMap> {
        self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// `(height, width)` shared by every map, `None` for an empty set.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.maps.first().map(|m| (m.height, m.width))
    }

    pub fn valid_pixels(&self) -> impl Iterator<Item = (f32, bool)> + '_ {
        self.maps.iter().flat_map(ScoreMap::valid_pixels)
    }

    pub fn count_valid(&self) -> usize {
        self.maps.iter().map(ScoreMap::count_valid).sum()
    }

    pub fn count_positive(&self) -> usize {
        self.maps.iter().map(ScoreMap::count_positive).sum()
    }

    /// Scores of all valid positive pixels, pooled across images.
    pub fn positive_scores(&self) -> Vec<f32> {
        self.valid_pixels()
            .filter_map(|(s, pos)| pos.then_some(s))
            .collect()
    }

    /// Subset by map indices, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> ScoreMapSet {
        ScoreMapSet {
            maps: indices.iter().map(|&i| self.maps[i].clone()).collect(),
        }
    }
}

/// Order-statistic index used by FNR calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// `k = ceil(alpha * (m + 1))`. Expected test FNR is `k / (m + 1)`, which
    /// can exceed `alpha` by up to `1 / (m + 1)`.
    #[default]
    Ceil,
    /// `k = floor(alpha * (m + 1))`. Expected test FNR is at most `alpha`.
    Floor,
}

/// Target risk level for binary FNR control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    alpha: f64,
    rule: QuantileRule,
}

impl RiskSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(RiskSpec {
                alpha,
                rule: QuantileRule::Ceil,
            })
        } else {
            Err(Error::AlphaOutOfRange(alpha))
        }
    }

    pub fn with_rule(mut self, rule: QuantileRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rule(&self) -> QuantileRule {
        self.rule
    }
}

/// Misclassification costs for the cost-weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub c_fn: f64,
    pub c_fp: f64,
}

impl CostSpec {
    pub fn new(c_fn: f64, c_fp: f64) -> Result<Self> {
        if c_fn > 0.0 && c_fp > 0.0 && c_fn.is_finite() && c_fp.is_finite() {
            Ok(CostSpec { c_fn, c_fp })
        } else {
            Err(Error::InvalidParameter(format!(
                "costs must be positive and finite, got c_fn={c_fn}, c_fp={c_fp}"
            )))
        }
    }

    pub fn max_cost(&self) -> f64 {
        self.c_fn.max(self.c_fp)
    }
}

/// Declared range of the deployment/calibration prevalence ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftInterval {
    pub rho_lo: f64,
    pub rho_hi: f64,
}

impl ShiftInterval {
    pub fn new(rho_lo: f64, rho_hi: f64) -> Result<Self> {
        if rho_lo > 0.0 && rho_lo <= rho_hi && rho_hi.is_finite() {
            Ok(ShiftInterval { rho_lo, rho_hi })
        } else {
            Err(Error::InvalidParameter(format!(
                "shift interval needs 0 < rho_lo <= rho_hi, got [{rho_lo}, {rho_hi}]"
            )))
        }
    }

    pub fn contains(&self, rho: f64) -> bool {
        (self.rho_lo..=self.rho_hi).contains(&rho)
    }
}

/// Positive-class fraction among valid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pi1: f64,
}

impl Prevalence {
    pub fn new(pi1: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&pi1) {
            Ok(Prevalence { pi1 })
        } else {
            Err(Error::InvalidParameter(format!(
                "prevalence {pi1} outside [0, 1]"
            )))
        }
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1
    }
}

pub fn prevalence_of(set: &ScoreMapSet) -> Result<Prevalence> {
    let valid = set.count_valid();
    if valid == 0 {
        return Err(Error::EmptyInput);
    }
    Prevalence::new(set.count_positive() as f64 / valid as f64)
}

/// Outcome of binary FNR calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_hat: f64,
    pub alpha_used: f64,
    pub m_positives: usize,
    pub quantile_index: usize,
    pub n_valid: usize,
}

/// Three-way zone boundaries together with every intermediate of their
/// derivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Base threshold from cost-weighted calibration at `alpha_safe`.
    pub lambda_hat: f64,
    pub alpha_cw: f64,
    pub alpha_safe: f64,
    pub eps_max: f64,
    pub b_pw: f64,
    pub shift_scale_s: f64,
    pub delta_lo_l1: f64,
    pub delta_hi_l1: f64,
    pub pi1: f64,
    pub n_valid: usize,
    pub cost: CostSpec,
    pub shift: ShiftInterval,
}

/// Action assigned to a pixel by a three-way policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Zone {
    Safe,
    Monitor,
    Evacuate,
}

impl Zone {
    pub fn code(self) -> i8 {
        match self {
            Zone::Safe => 0,
            Zone::Monitor => 1,
            Zone::Evacuate => 2,
        }
    }

    pub fn from_code(code: i8) -> Option<Zone> {
        match code {
            0 => Some(Zone::Safe),
            1 => Some(Zone::Monitor),
            2 => Some(Zone::Evacuate),
            _ => None,
        }
    }
}

/// Percentile bootstrap interval attached to one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub confidence: f64,
    pub resamples: usize,
    pub skipped: usize,
    pub method: String,
}

/// Evaluation of a threshold on a labelled set.
///
/// Ratios whose denominator is zero are `None` rather than a placeholder
/// number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lambda: f64,
    pub coverage: f64,
    pub fnr: f64,
    pub set_size: f64,
    pub precision: Option<f64>,
    pub f1: f64,
    pub iou: f64,
    pub auroc: Option<f64>,
    pub auprc: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ci: BTreeMap<String, MetricInterval>,
}

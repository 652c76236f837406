//! Image-level percentile bootstrap.
//!
//! Each resample draws `n` images with replacement from the `n` images of the
//! set. Resample `b` uses a ChaCha8 stream derived from `(seed, b)`, so the
//! intervals do not depend on how resamples are scheduled across threads.
//!
//! Resamples are evaluated through per-image multiplicities rather than by
//! materialising the resampled set: threshold metrics add up per-image
//! confusion counts, ranking metrics walk the pooled pixels once in score
//! order with each pixel weighted by its image's multiplicity.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{MetricInterval, ScoreMapSet};
use crate::error::{Error, Result};
use crate::metrics::{self, image_confusion, Confusion};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const METHOD: &str = "percentile, image-level resampling";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl BootstrapSpec {
    pub fn new(resamples: usize, confidence: f64, seed: u64) -> Result<Self> {
        if resamples == 0 {
            return Err(Error::InvalidParameter("bootstrap needs at least one resample".into()));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence {confidence} outside (0, 1)"
            )));
        }
        Ok(BootstrapSpec {
            resamples,
            confidence,
            seed,
        })
    }
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec {
            resamples: DEFAULT_RESAMPLES,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coverage,
    Fnr,
    SetSize,
    Precision,
    F1,
    Iou,
    Auroc,
    Auprc,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Coverage,
        Metric::Fnr,
        Metric::SetSize,
        Metric::Precision,
        Metric::F1,
        Metric::Iou,
        Metric::Auroc,
        Metric::Auprc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::Fnr => "fnr",
            Metric::SetSize => "set_size",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
            Metric::Iou => "iou",
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
        }
    }

    pub fn needs_threshold(self) -> bool {
        !matches!(self, Metric::Auroc | Metric::Auprc)
    }

    fn on_confusion(self, c: &Confusion) -> Option<f64> {
        let p = c.point_metrics().ok()?;
        match self {
            Metric::Coverage => Some(p.coverage),
            Metric::Fnr => Some(p.fnr),
            Metric::SetSize => Some(p.set_size),
            Metric::Precision => p.precision,
            Metric::F1 => Some(p.f1),
            Metric::Iou => Some(p.iou),
            Metric::Auroc | Metric::Auprc => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric {s:?}")))
    }
}

/// Valid pixels of a set in ascending score order, tagged with their image.
struct RankedPixels {
    scores: Vec<f32>,
    positive: Vec<bool>,
    image: Vec<u32>,
}

impl RankedPixels {
    fn new(set: &ScoreMapSet) -> Self {
        let mut px: Vec<(f32, bool, u32)> = set
            .maps()
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.valid_pixels().map(move |(s, p)| (s, p, i as u32)))
            .collect();
        px.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        RankedPixels {
            scores: px.iter().map(|p| p.0).collect(),
            positive: px.iter().map(|p| p.1).collect(),
            image: px.iter().map(|p| p.2).collect(),
        }
    }

    /// Tie groups as index ranges, ascending.
    fn groups(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut i = 0;
        std::iter::from_fn(move || {
            if i >= self.scores.len() {
                return None;
            }
            let start = i;
            while i < self.scores.len() && self.scores[i] == self.scores[start] {
                i += 1;
            }
            Some(start..i)
        })
    }

    fn class_weights(&self, range: std::ops::Range<usize>, w: &[u32]) -> (f64, f64) {
        let (mut pos, mut neg) = (0u64, 0u64);
        for k in range {
            let wk = u64::from(w[self.image[k] as usize]);
            if self.positive[k] {
                pos += wk;
            } else {
                neg += wk;
            }
        }
        (pos as f64, neg as f64)
    }

    fn auroc(&self, w: &[u32]) -> Option<f64> {
        let (mut numer, mut neg_below, mut pos_total) = (0.0, 0.0, 0.0);
        for g in self.groups() {
            let (p, n) = self.class_weights(g, w);
            numer += p * (neg_below + 0.5 * n);
            neg_below += n;
            pos_total += p;
        }
        (pos_total > 0.0 && neg_below > 0.0).then(|| numer / (pos_total * neg_below))
    }

    fn auprc(&self, w: &[u32]) -> Option<f64> {
        let groups: Vec<_> = self.groups().collect();
        let weights: Vec<(f64, f64)> = groups
            .iter()
            .map(|g| self.class_weights(g.clone(), w))
            .collect();
        let m: f64 = weights.iter().map(|x| x.0).sum();
        if m == 0.0 {
            return None;
        }
        let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
        for &(p, n) in weights.iter().rev() {
            tp += p;
            fp += n;
            if p > 0.0 {
                ap += (p / m) * (tp / (tp + fp));
            }
        }
        Some(ap)
    }
}

/// Precomputed per-image statistics for evaluating resamples.
struct Resampler {
    confusions: Option<Vec<Confusion>>,
    ranked: Option<RankedPixels>,
}

impl Resampler {
    fn new(set: &ScoreMapSet, metrics: &[Metric], lambda: Option<f64>) -> Self {
        let confusions = lambda
            .filter(|_| metrics.iter().any(|m| m.needs_threshold()))
            .map(|l| {
                set.maps()
                    .iter()
                    .map(|m| image_confusion(m.valid_pixels(), l))
                    .collect()
            });
        let ranked = metrics
            .iter()
            .any(|m| !m.needs_threshold())
            .then(|| RankedPixels::new(set));
        Resampler { confusions, ranked }
    }

    fn eval(&self, metric: Metric, weights: &[u32]) -> Option<f64> {
        match metric {
            Metric::Auroc => self.ranked.as_ref()?.auroc(weights),
            Metric::Auprc => self.ranked.as_ref()?.auprc(weights),
            m => {
                let c = self
                    .confusions
                    .as_ref()?
                    .iter()
                    .zip(weights)
                    .filter(|(_, &w)| w > 0)
                    .fold(Confusion::default(), |acc, (c, &w)| {
                        acc + c.scaled(u64::from(w))
                    });
                m.on_confusion(&c)
            }
        }
    }
}

fn resample_weights(n: usize, seed: u64, index: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut w = vec![0u32; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1;
    }
    w
}

/// Linear interpolation between order statistics of sorted `v`.
fn percentile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn point_estimate(set: &ScoreMapSet, metric: Metric, lambda: Option<f64>) -> Result<f64> {
    let undefined = || Error::MetricUndefined(format!("{metric} on the full set"));
    match metric {
        Metric::Auroc => metrics::auroc(set),
        Metric::Auprc => metrics::auprc(set),
        m => {
            let lambda = lambda.ok_or_else(|| {
                Error::InvalidParameter(format!("metric {m} needs a threshold"))
            })?;
            let c = metrics::confusion_at(set, lambda)?;
            c.point_metrics()?;
            m.on_confusion(&c).ok_or_else(undefined)
        }
    }
}

/// Bootstrap intervals for several metrics from one shared set of resamples.
pub fn bootstrap_many(
    set: &ScoreMapSet,
    metrics: &[Metric],
    lambda: Option<f64>,
    spec: &BootstrapSpec,
) -> Vec<(Metric, Result<MetricInterval>)> {
    let points: Vec<Result<f64>> = metrics
        .iter()
        .map(|&m| point_estimate(set, m, lambda))
        .collect();
    let resampler = Resampler::new(set, metrics, lambda);
    let n = set.len();
    let draws: Vec<Vec<Option<f64>>> = (0..spec.resamples)
        .into_par_iter()
        .map(|b| {
            let w = resample_weights(n, spec.seed, b);
            metrics.iter().map(|&m| resampler.eval(m, &w)).collect()
        })
        .collect();

    metrics
        .iter()
        .enumerate()
        .zip(points)
        .map(|((j, &metric), point)| {
            let result = point.and_then(|point| {
                let mut values: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
                let skipped = spec.resamples - values.len();
                if values.is_empty() || 2 * skipped > spec.resamples {
                    return Err(Error::MetricUndefined(format!(
                        "{metric}: {skipped} of {} resamples undefined",
                        spec.resamples
                    )));
                }
                values.sort_unstable_by(f64::total_cmp);
                let tail = (1.0 - spec.confidence) / 2.0;
                Ok(MetricInterval {
                    point,
                    lo: percentile(&values, tail),
                    hi: percentile(&values, 1.0 - tail),
                    confidence: spec.confidence,
                    resamples: spec.resamples,
                    skipped,
                    method: METHOD.to_string(),
                })
            });
            (metric, result)
        })
        .collect()
}

pub fn bootstrap_ci(
    set: &ScoreMapSet,
    metric: Metric,
    lambda: Option<f64>,
    spec: &BootstrapSpec,
) -> Result<MetricInterval> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    bootstrap_many(set, &[metric], lambda, spec)
        .pop()
        .expect("one metric in, one result out")
        .1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PixelLabel, ScoreMap};

    fn image(id: u32, scores: &[f32], labels: &[i8]) -> ScoreMap {
        let labels = labels
            .iter()
            .map(|&l| PixelLabel::try_from(l).unwrap())
            .collect();
        ScoreMap::new(id, 1, scores.len(), scores.to_vec(), labels).unwrap()
    }

    fn spec(resamples: usize) -> BootstrapSpec {
        BootstrapSpec::new(resamples, 0.95, 42).unwrap()
    }

    #[test]
    fn constant_metric_has_zero_width() {
        let maps = (0..6)
            .map(|i| image(i, &[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0]))
            .collect();
        let set = ScoreMapSet::new(maps).unwrap();
        let ci = bootstrap_ci(&set, Metric::Coverage, Some(0.5), &spec(200)).unwrap();
        assert_eq!((ci.lo, ci.point, ci.hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_image_is_degenerate() {
        let set = ScoreMapSet::new(vec![image(0, &[0.9, 0.3, 0.4, 0.2], &[1, 1, 0, 0])]).unwrap();
        for m in Metric::ALL {
            let ci = bootstrap_ci(&set, m, Some(0.35), &spec(50)).unwrap();
            assert_eq!(ci.lo, ci.point, "{m}");
            assert_eq!(ci.hi, ci.point, "{m}");
        }
    }

    #[test]
    fn weighted_route_matches_direct_metrics() {
        let maps = vec![
            image(0, &[0.9, 0.3, 0.4, 0.2], &[1, 1, 0, 0]),
            image(1, &[0.5, 0.5, 0.7, 0.1], &[0, 1, 1, -1]),
            image(2, &[0.6, 0.35, 0.3, 0.05], &[0, 0, 1, 0]),
        ];
        let set = ScoreMapSet::new(maps.clone()).unwrap();
        let r = Resampler::new(&set, &Metric::ALL, Some(0.4));
        // multiplicities (2, 0, 1) == explicit set [m0, m0', m2]
        let w = [2, 0, 1];
        let dup = ScoreMap::new(9, 1, 4, maps[0].scores().to_vec(), maps[0].labels().to_vec())
            .unwrap();
        let explicit = ScoreMapSet::new(vec![maps[0].clone(), dup, maps[2].clone()]).unwrap();
        for m in Metric::ALL {
            let direct = point_estimate(&explicit, m, Some(0.4)).ok();
            assert_eq!(r.eval(m, &w), direct, "{m}");
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let maps = (0..20)
            .map(|i| {
                let f = i as f32 / 40.0;
                image(i, &[0.9 - f, 0.1 + f, 0.5, 0.3], &[1, 0, (i % 2) as i8, 1])
            })
            .collect();
        let set = ScoreMapSet::new(maps).unwrap();
        let a = bootstrap_many(&set, &Metric::ALL, Some(0.45), &spec(300));
        let b = bootstrap_many(&set, &Metric::ALL, Some(0.45), &spec(300));
        for ((ma, ra), (_, rb)) in a.iter().zip(&b) {
            let (ra, rb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
            assert_eq!(ra.lo.to_bits(), rb.lo.to_bits(), "{ma}");
            assert_eq!(ra.hi.to_bits(), rb.hi.to_bits(), "{ma}");
            assert!(ra.lo <= ra.hi);
        }
    }

    #[test]
    fn mostly_undefined_resamples_error() {
        // AUROC needs both the lone positive and the lone negative image;
        // about 60% of resamples miss at least one of them
        let mut maps = vec![image(0, &[0.9], &[1]), image(1, &[0.2], &[0])];
        maps.extend((2..40).map(|i| image(i, &[0.5], &[-1])));
        let set = ScoreMapSet::new(maps).unwrap();
        assert!(matches!(
            bootstrap_ci(&set, Metric::Auroc, None, &spec(400)),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn threshold_metric_without_lambda_is_invalid() {
        let set = ScoreMapSet::new(vec![image(0, &[0.9, 0.1], &[1, 0])]).unwrap();
        assert!(matches!(
            bootstrap_ci(&set, Metric::F1, None, &spec(10)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(bootstrap_ci(&set, Metric::Auroc, None, &spec(10)).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(BootstrapSpec::new(0, 0.95, 1).is_err());
        assert!(BootstrapSpec::new(10, 1.0, 1).is_err());
        assert_eq!(BootstrapSpec::default().resamples, 10_000);
        assert_eq!("set_size".parse::<Metric>().unwrap(), Metric::SetSize);
        assert!("accuracy".parse::<Metric>().is_err());
    }
}

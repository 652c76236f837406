//! Threshold metrics and pooled ranking metrics over valid pixels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crc_binary::flagged;
use crate::domain::{MetricsReport, ScoreMapSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl Confusion {
    pub fn scaled(self, k: u64) -> Confusion {
        Confusion {
            tp: self.tp * k,
            fp: self.fp * k,
            fn_: self.fn_ * k,
            tn: self.tn * k,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn point_metrics(&self) -> Result<PointMetrics> {
        if self.total() == 0 {
            return Err(Error::EmptyInput);
        }
        if self.positives() == 0 {
            return Err(Error::NoPositives);
        }
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let coverage = tp / (tp + fn_);
        Ok(PointMetrics {
            coverage,
            fnr: fn_ / (tp + fn_),
            set_size: (tp + fp) / self.total() as f64,
            precision: (self.tp + self.fp > 0).then(|| tp / (tp + fp)),
            f1: 2.0 * tp / (2.0 * tp + fp + fn_),
            iou: tp / (tp + fp + fn_),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub coverage: f64,
    pub fnr: f64,
    pub set_size: f64,
    pub precision: Option<f64>,
    pub f1: f64,
    pub iou: f64,
}

pub fn confusion_at(set: &ScoreMapSet, lambda: f64) -> Result<Confusion> {
    let c = set
        .maps()
        .iter()
        .map(|m| image_confusion(m.valid_pixels(), lambda))
        .fold(Confusion::default(), std::ops::Add::add);
    if c.total() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(c)
}

pub(crate) fn image_confusion(pixels: impl Iterator<Item = (f32, bool)>, lambda: f64) -> Confusion {
    let mut c = Confusion::default();
    for (s, pos) in pixels {
        match (flagged(s, lambda), pos) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn point_metrics(set: &ScoreMapSet, lambda: f64) -> Result<PointMetrics> {
    confusion_at(set, lambda)?.point_metrics()
}

/// Mann-Whitney AUROC: P(random positive outranks random negative), ties
/// counted one half, computed from mid-ranks of the pooled valid pixels.
pub fn auroc(set: &ScoreMapSet) -> Result<f64> {
    let mut pixels: Vec<(f32, bool)> = set.valid_pixels().collect();
    let m = pixels.iter().filter(|p| p.1).count();
    let n0 = pixels.len() - m;
    if m == 0 {
        return Err(Error::NoPositives);
    }
    if n0 == 0 {
        return Err(Error::NoNegatives);
    }
    pixels.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < pixels.len() {
        let mut j = i;
        let mut pos_in_group = 0usize;
        while j < pixels.len() && pixels[j].0 == pixels[i].0 {
            pos_in_group += usize::from(pixels[j].1);
            j += 1;
        }
        // 1-based ranks i+1..=j share the mid-rank (i+1+j)/2
        rank_sum += pos_in_group as f64 * (i + 1 + j) as f64 / 2.0;
        i = j;
    }
    let (m, n0) = (m as f64, n0 as f64);
    let u = rank_sum - m * (m + 1.0) / 2.0;
    Ok(u / (m * n0))
}

/// Step-wise average precision, ties grouped by distinct score.
pub fn auprc(set: &ScoreMapSet) -> Result<f64> {
    let mut pixels: Vec<(f32, bool)> = set.valid_pixels().collect();
    let m = pixels.iter().filter(|p| p.1).count();
    if m == 0 {
        return Err(Error::NoPositives);
    }
    pixels.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    let mut i = 0;
    while i < pixels.len() {
        let v = pixels[i].0;
        let mut gained = 0u64;
        while i < pixels.len() && pixels[i].0 == v {
            if pixels[i].1 {
                gained += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += gained;
        if gained > 0 {
            ap += (gained as f64 / m as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Full report at `lambda`. AUROC is absent when the set has no negatives.
pub fn evaluate(set: &ScoreMapSet, lambda: f64) -> Result<MetricsReport> {
    let c = confusion_at(set, lambda)?;
    let p = c.point_metrics()?;
    let auroc = match auroc(set) {
        Ok(v) => Some(v),
        Err(Error::NoNegatives) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        lambda,
        coverage: p.coverage,
        fnr: p.fnr,
        set_size: p.set_size,
        precision: p.precision,
        f1: p.f1,
        iou: p.iou,
        auroc,
        auprc: auprc(set)?,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
        ci: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PixelLabel, ScoreMap};

    fn set(scores: &[f32], labels: &[i8]) -> ScoreMapSet {
        let labels = labels
            .iter()
            .map(|&l| PixelLabel::try_from(l).unwrap())
            .collect();
        ScoreMapSet::new(vec![
            ScoreMap::new(0, 1, scores.len(), scores.to_vec(), labels).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn confusion_examples() {
        let s = set(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]);
        assert_eq!(
            confusion_at(&s, 0.5).unwrap(),
            Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 }
        );
        let c = confusion_at(&s, 0.0).unwrap();
        assert_eq!((c.fn_, c.tn), (0, 0));
        let c = confusion_at(&s, 1.5).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        assert!(matches!(confusion_at(&set(&[0.1], &[-1]), 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn point_metric_formulas() {
        let p = Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 }.point_metrics().unwrap();
        assert_eq!(p.f1, 0.5);
        assert_eq!(p.iou, 1.0 / 3.0);
        assert_eq!(p.precision, Some(0.5));
        assert_eq!(p.coverage + p.fnr, 1.0);
        let p = Confusion { tp: 7, fp: 0, fn_: 3, tn: 0 }.point_metrics().unwrap();
        assert_eq!(p.fnr, 0.3);

        let perfect = point_metrics(&set(&[0.9, 0.8, 0.1], &[1, 1, 0]), 0.5).unwrap();
        assert_eq!(
            (perfect.precision, perfect.coverage, perfect.f1, perfect.iou),
            (Some(1.0), 1.0, 1.0, 1.0)
        );

        let none = Confusion { tp: 0, fp: 0, fn_: 2, tn: 3 }.point_metrics().unwrap();
        assert_eq!(none.precision, None);
        assert!(matches!(
            Confusion { tp: 0, fp: 1, fn_: 0, tn: 3 }.point_metrics(),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn all_flagged_precision_is_prevalence() {
        let mut labels = vec![0i8; 20];
        labels[3] = 1;
        let scores: Vec<f32> = (0..20).map(|i| i as f32 / 20.0).collect();
        let p = point_metrics(&set(&scores, &labels), 0.0).unwrap();
        assert_eq!(p.precision, Some(0.05));
        assert_eq!(p.coverage, 1.0);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.5; 5], &[0, 1, 0, 1, 1])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap(), 0.75);
        assert!(matches!(auroc(&set(&[0.1], &[1])), Err(Error::NoNegatives)));
        assert!(matches!(auroc(&set(&[0.1], &[0])), Err(Error::NoPositives)));
    }

    #[test]
    fn auprc_examples() {
        assert!((auprc(&set(&[0.9, 0.8, 0.7], &[1, 0, 1])).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auprc(&set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        // one tie group holding everything: precision = prevalence
        assert_eq!(auprc(&set(&[0.5; 4], &[1, 0, 0, 0])).unwrap(), 0.25);
    }

    #[test]
    fn evaluate_without_negatives_omits_auroc() {
        let r = evaluate(&set(&[0.2, 0.9], &[1, 1]), 0.5).unwrap();
        assert_eq!(r.auroc, None);
        assert_eq!(r.coverage, 0.5);
    }
}

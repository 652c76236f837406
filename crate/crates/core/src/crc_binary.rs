//! Binary conformal risk control of the pooled pixel false-negative rate.
//!
//! A pixel is flagged at threshold `lambda` iff `score >= lambda`. Calibration
//! picks the `k`-th smallest positive score, so at most `k - 1` calibration
//! positives fall strictly below the threshold. Under exchangeability the
//! expected test FNR is `k / (m + 1)` for continuous scores (at most that with
//! ties). The default `k = ceil(alpha * (m + 1))` can overshoot `alpha` by up
//! to `1 / (m + 1)`; [`QuantileRule::Floor`] never does.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{CalibrationResult, QuantileRule, RiskSpec, ScoreMapSet};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn flagged(score: f32, lambda: f64) -> bool {
    f64::from(score) >= lambda
}

/// `ceil(x)` that tolerates the representation error of products such as
/// `0.1 * 30`, which is 3 in exact arithmetic but slightly above 3 in f64.
pub(crate) fn robust_ceil(x: f64) -> usize {
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil();
    if c < 0.0 {
        0
    } else {
        c as usize
    }
}

/// `floor(x)`, tolerant of representation error in the same way.
pub(crate) fn robust_floor(x: f64) -> usize {
    let f = (x + 1e-9 * x.abs().max(1.0)).floor();
    if f < 0.0 {
        0
    } else {
        f as usize
    }
}

/// The order-statistic index `ceil(alpha * (m + 1))`, at least 1.
pub fn quantile_index(alpha: f64, m: usize) -> usize {
    robust_ceil(alpha * (m as f64 + 1.0)).max(1)
}

/// Index under `rule`; `floor` may be 0, meaning no order statistic works.
pub fn quantile_index_with(rule: QuantileRule, alpha: f64, m: usize) -> usize {
    match rule {
        QuantileRule::Ceil => quantile_index(alpha, m),
        QuantileRule::Floor => robust_floor(alpha * (m as f64 + 1.0)),
    }
}

pub fn fnr_at(set: &ScoreMapSet, lambda: f64) -> Result<f64> {
    let (mut positives, mut missed) = (0u64, 0u64);
    for (s, pos) in set.valid_pixels() {
        if pos {
            positives += 1;
            missed += u64::from(!flagged(s, lambda));
        }
    }
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    Ok(missed as f64 / positives as f64)
}

pub fn coverage_at(set: &ScoreMapSet, lambda: f64) -> Result<f64> {
    fnr_at(set, lambda).map(|f| 1.0 - f)
}

/// Fraction of valid pixels flagged at `lambda`.
pub fn set_size_at(set: &ScoreMapSet, lambda: f64) -> Result<f64> {
    let (mut valid, mut hit) = (0u64, 0u64);
    for (s, _) in set.valid_pixels() {
        valid += 1;
        hit += u64::from(flagged(s, lambda));
    }
    if valid == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(hit as f64 / valid as f64)
}

/// Pixel-pooled FNR calibration.
pub fn calibrate_fnr(cal: &ScoreMapSet, spec: &RiskSpec) -> Result<CalibrationResult> {
    let mut positives = cal.positive_scores();
    let m = positives.len();
    if m == 0 {
        return Err(Error::NoPositives);
    }
    let k = quantile_index_with(spec.rule(), spec.alpha(), m);
    if k == 0 {
        return Err(Error::AlphaTooSmallForSample {
            alpha: spec.alpha(),
            m,
        });
    }
    if k > m {
        return Err(Error::AlphaTooLargeForSample { k, m });
    }
    let (_, kth, _) = positives.select_nth_unstable_by(k - 1, f32::total_cmp);
    Ok(CalibrationResult {
        lambda_hat: f64::from(*kth),
        alpha_used: spec.alpha(),
        m_positives: m,
        quantile_index: k,
        n_valid: cal.count_valid(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub fnr: f64,
    pub set_size: f64,
}

/// FNR and set size at every grid point, in grid order.
///
/// Sorts once and answers each grid point by binary search, so the counts are
/// the same ones `fnr_at` and `set_size_at` would produce.
pub fn fnr_sweep(set: &ScoreMapSet, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty threshold grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| l.is_nan()) {
        return Err(Error::InvalidParameter(format!("grid value {bad}")));
    }
    let mut all: Vec<f32> = Vec::with_capacity(set.count_valid());
    let mut pos: Vec<f32> = Vec::new();
    for (s, p) in set.valid_pixels() {
        all.push(s);
        if p {
            pos.push(s);
        }
    }
    if all.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pos.is_empty() {
        return Err(Error::NoPositives);
    }
    all.sort_unstable_by(f32::total_cmp);
    pos.sort_unstable_by(f32::total_cmp);
    let below = |v: &[f32], lambda: f64| v.partition_point(|&s| !flagged(s, lambda));
    Ok(grid
        .iter()
        .map(|&lambda| SweepPoint {
            lambda,
            fnr: below(&pos, lambda) as f64 / pos.len() as f64,
            set_size: (all.len() - below(&all, lambda)) as f64 / all.len() as f64,
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut out: W) -> Result<()> {
    writeln!(out, "lambda,fnr,set_size")?;
    for p in points {
        writeln!(out, "{},{},{}", p.lambda, p.fnr, p.set_size)?;
    }
    out.flush()?;
    Ok(())
}

/// Inclusive arithmetic grid `start, start+step, ..., <= stop`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidParameter(format!("grid {text:?}; expected start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start
    {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

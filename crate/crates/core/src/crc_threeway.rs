//! Cost-weighted, shift-aware three-way calibration.
//!
//! Pixels are routed to SAFE (`p < lambda_min`), MONITOR
//! (`lambda_min <= p < lambda_max`) or EVACUATE (`p >= lambda_max`). The
//! calibration level is tightened by the worst importance-weight mismatch
//! over the declared prevalence-ratio interval, a base threshold is chosen by
//! cost-weighted calibration at the tightened level, and the zone boundaries
//! are offset from it in proportion to the mismatch at each endpoint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    prevalence_of, CostSpec, Prevalence, ScoreMapSet, ShiftInterval, Zone, ZoneThresholds,
};
use crate::error::{Error, Result};

/// Smallest f64 above 1: a threshold no score in `[0, 1]` reaches.
pub const ABOVE_ONE: f64 = 1.000_000_000_000_000_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftDiagnostics {
    pub rho: f64,
    pub w1: f64,
    pub w0: f64,
    pub delta_l1: f64,
}

/// Importance weights of each class when positive prevalence is scaled by
/// `rho`, and their L1 distance from uniform weighting.
pub fn shift_diagnostics(prev: Prevalence, rho: f64) -> Result<ShiftDiagnostics> {
    let (pi1, pi0) = (prev.pi1(), prev.pi0());
    if pi1 <= 0.0 || pi1 >= 1.0 {
        return Err(Error::DegeneratePrevalence(pi1));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("prevalence ratio {rho}")));
    }
    let z = rho * pi1 + pi0;
    let w1 = (rho * pi1) / z / pi1;
    let w0 = pi0 / z / pi0;
    Ok(ShiftDiagnostics {
        rho,
        w1,
        w0,
        delta_l1: (w1 - 1.0).abs() + (w0 - 1.0).abs(),
    })
}

/// `max(c_fn * pi1, c_fp * pi0)`.
pub fn prevalence_weighted_bound(cost: &CostSpec, prev: Prevalence) -> f64 {
    (cost.c_fn * prev.pi1()).max(cost.c_fp * prev.pi0())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeightedResult {
    pub lambda: f64,
    /// `c_fn * FNR + c_fp * FPR` on the calibration set at `lambda`.
    pub empirical_risk: f64,
    /// Finite-sample correction `c_fn/(m+1) + c_fp/(n0+1)`.
    pub margin: f64,
    pub m_positives: usize,
    pub n_negatives: usize,
}

/// Largest threshold whose class-conditional cost risk
/// `c_fn * FNR(lambda) + c_fp * FPR(lambda)`, plus the finite-sample margin,
/// stays within `alpha`.
///
/// Candidates are the distinct valid scores, 0, and [`ABOVE_ONE`] (flag
/// nothing), scanned from high to low. The risk is not monotone in `lambda`,
/// so every candidate is evaluated.
pub fn calibrate_cost_weighted(
    cal: &ScoreMapSet,
    cost: &CostSpec,
    alpha: f64,
) -> Result<CostWeightedResult> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!("alpha {alpha} must be > 0")));
    }
    let mut pixels: Vec<(f32, bool)> = cal.valid_pixels().collect();
    let m = pixels.iter().filter(|p| p.1).count();
    let n0 = pixels.len() - m;
    if m == 0 {
        return Err(Error::NoPositives);
    }
    if n0 == 0 {
        return Err(Error::NoNegatives);
    }
    pixels.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let margin = cost.c_fn / (m as f64 + 1.0) + cost.c_fp / (n0 as f64 + 1.0);
    let risk = |tp: usize, fp: usize| {
        cost.c_fn * ((m - tp) as f64 / m as f64) + cost.c_fp * (fp as f64 / n0 as f64)
    };
    let accept = |lambda: f64, r: f64| CostWeightedResult {
        lambda,
        empirical_risk: r,
        margin,
        m_positives: m,
        n_negatives: n0,
    };

    let r = risk(0, 0);
    if r + margin <= alpha {
        return Ok(accept(ABOVE_ONE, r));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pixels.len() {
        let v = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == v {
            if pixels[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = risk(tp, fp);
        if r + margin <= alpha {
            return Ok(accept(f64::from(v), r));
        }
    }
    // Every pixel is already flagged at the smallest score, so lambda = 0
    // has the same risk and was covered by the loop.
    Err(Error::Infeasible(format!(
        "no threshold reaches cost-weighted level {alpha} (margin {margin})"
    )))
}

pub fn calibrate_three_way(
    cal: &ScoreMapSet,
    cost: &CostSpec,
    alpha_cw: f64,
    shift: &ShiftInterval,
) -> Result<ZoneThresholds> {
    if !(alpha_cw > 0.0 && alpha_cw < cost.max_cost()) {
        return Err(Error::InvalidParameter(format!(
            "alpha_cw {alpha_cw} must lie in (0, {})",
            cost.max_cost()
        )));
    }
    let prev = prevalence_of(cal)?;
    if prev.pi1() == 0.0 {
        return Err(Error::NoPositives);
    }
    if prev.pi1() == 1.0 {
        return Err(Error::NoNegatives);
    }
    let n_valid = cal.count_valid();
    let b_pw = prevalence_weighted_bound(cost, prev);
    let delta_lo = shift_diagnostics(prev, shift.rho_lo)?.delta_l1;
    let delta_hi = shift_diagnostics(prev, shift.rho_hi)?.delta_l1;
    let eps_max = b_pw * delta_lo.max(delta_hi) + b_pw / (n_valid as f64 + 1.0);
    let alpha_safe = alpha_cw - eps_max;
    if alpha_safe <= 0.0 {
        return Err(Error::Infeasible(format!(
            "shift interval too wide: alpha_safe = {alpha_cw} - {eps_max} <= 0"
        )));
    }
    let base = calibrate_cost_weighted(cal, cost, alpha_safe)?;
    let s = b_pw / cost.max_cost();
    // The upper clamp on lambda_min only bites when the base threshold is the
    // flag-nothing sentinel.
    let lambda_min = (base.lambda - s * delta_lo).clamp(0.0, 1.0);
    let lambda_max = (base.lambda + s * delta_hi).min(1.0);
    Ok(ZoneThresholds {
        lambda_min,
        lambda_max,
        lambda_hat: base.lambda,
        alpha_cw,
        alpha_safe,
        eps_max,
        b_pw,
        shift_scale_s: s,
        delta_lo_l1: delta_lo,
        delta_hi_l1: delta_hi,
        pi1: prev.pi1(),
        n_valid,
        cost: *cost,
        shift: *shift,
    })
}

pub fn zone_of(score: f32, zones: &ZoneThresholds) -> Zone {
    let p = f64::from(score);
    if p < zones.lambda_min {
        Zone::Safe
    } else if p < zones.lambda_max {
        Zone::Monitor
    } else {
        Zone::Evacuate
    }
}

/// Zone grid for one image; `None` marks no-data pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneMap {
    pub image_id: u32,
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
    pub zones: Vec<Option<Zone>>,
}

/// Aggregate zone statistics over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub n_valid: u64,
    pub frac_safe: f64,
    pub frac_monitor: f64,
    pub frac_evacuate: f64,
    /// Positives routed to MONITOR or EVACUATE, over all positives.
    pub coverage: Option<f64>,
    /// Positives routed to EVACUATE, over all positives.
    pub coverage_evacuate: Option<f64>,
    /// Fraction routed to MONITOR or EVACUATE.
    pub set_size_flagged: f64,
    /// Fraction routed to EVACUATE.
    pub set_size_evacuate: f64,
    /// MONITOR fraction `d`.
    pub d_monitor: f64,
    /// Mean cost-weighted loss over SAFE and EVACUATE pixels; absent if every
    /// pixel is MONITOR.
    pub decided_risk: Option<f64>,
    /// `alpha_cw / (1 - d)`; absent if `d = 1`.
    pub decided_bound: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy)]
struct ZoneCounts {
    // [zone][is_positive]
    n: [[u64; 2]; 3],
}

impl ZoneCounts {
    fn add(mut self, other: ZoneCounts) -> ZoneCounts {
        for z in 0..3 {
            for c in 0..2 {
                self.n[z][c] += other.n[z][c];
            }
        }
        self
    }

    fn record(&mut self, zone: Zone, positive: bool) {
        self.n[zone.code() as usize][usize::from(positive)] += 1;
    }
}

fn report_from_counts(c: &ZoneCounts, zones: &ZoneThresholds) -> Result<ZoneReport> {
    let per_zone = |z: Zone| c.n[z.code() as usize][0] + c.n[z.code() as usize][1];
    let (safe, monitor, evac) = (
        per_zone(Zone::Safe),
        per_zone(Zone::Monitor),
        per_zone(Zone::Evacuate),
    );
    let total = safe + monitor + evac;
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let frac = |k: u64| k as f64 / total as f64;
    let positives: u64 = c.n.iter().map(|z| z[1]).sum();
    let pos_in = |z: Zone| c.n[z.code() as usize][1];
    let ratio = |num: u64| (positives > 0).then(|| num as f64 / positives as f64);

    let decided = safe + evac;
    let decided_loss = zones.cost.c_fn * pos_in(Zone::Safe) as f64
        + zones.cost.c_fp * c.n[Zone::Evacuate.code() as usize][0] as f64;
    let d = frac(monitor);
    Ok(ZoneReport {
        n_valid: total,
        frac_safe: frac(safe),
        frac_monitor: d,
        frac_evacuate: frac(evac),
        coverage: ratio(pos_in(Zone::Monitor) + pos_in(Zone::Evacuate)),
        coverage_evacuate: ratio(pos_in(Zone::Evacuate)),
        set_size_flagged: frac(monitor + evac),
        set_size_evacuate: frac(evac),
        d_monitor: d,
        decided_risk: (decided > 0).then(|| decided_loss / decided as f64),
        decided_bound: (monitor < total).then(|| zones.alpha_cw / (1.0 - d)),
    })
}

/// Zone statistics without materialising zone grids.
pub fn zone_report(set: &ScoreMapSet, zones: &ZoneThresholds) -> Result<ZoneReport> {
    let counts = set
        .maps()
        .par_iter()
        .map(|m| {
            let mut c = ZoneCounts::default();
            for (s, pos) in m.valid_pixels() {
                c.record(zone_of(s, zones), pos);
            }
            c
        })
        .reduce(ZoneCounts::default, ZoneCounts::add);
    report_from_counts(&counts, zones)
}

/// Routes every pixel and aggregates the zone report.
pub fn assign_zones(
    set: &ScoreMapSet,
    zones: &ZoneThresholds,
) -> Result<(Vec<ZoneMap>, ZoneReport)> {
    if !(0.0 <= zones.lambda_min && zones.lambda_min <= zones.lambda_max && zones.lambda_max <= 1.0)
    {
        return Err(Error::InvalidParameter(format!(
            "zone thresholds must satisfy 0 <= {} <= {} <= 1",
            zones.lambda_min, zones.lambda_max
        )));
    }
    let per_image: Vec<(ZoneMap, ZoneCounts)> = set
        .maps()
        .par_iter()
        .map(|m| {
            let mut c = ZoneCounts::default();
            let grid = m
                .scores()
                .iter()
                .zip(m.labels())
                .map(|(&s, l)| {
                    l.is_valid().then(|| {
                        let z = zone_of(s, zones);
                        c.record(z, l.is_positive());
                        z
                    })
                })
                .collect();
            let map = ZoneMap {
                image_id: m.image_id(),
                height: m.height(),
                width: m.width(),
                scores: m.scores().to_vec(),
                zones: grid,
            };
            (map, c)
        })
        .collect();
    let counts = per_image
        .iter()
        .fold(ZoneCounts::default(), |acc, (_, c)| acc.add(*c));
    let report = report_from_counts(&counts, zones)?;
    Ok((per_image.into_iter().map(|(m, _)| m).collect(), report))
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

    fn repeat(scores: &[f32], labels: &[i8], times: usize) -> ScoreMapSet {
        let s: Vec<f32> = scores.iter().copied().cycle().take(scores.len() * times).collect();
        let l: Vec<i8> = labels.iter().copied().cycle().take(labels.len() * times).collect();
        set(&s, &l)
    }

    fn prev(pi1: f64) -> Prevalence {
        Prevalence::new(pi1).unwrap()
    }

    #[test]
    fn no_shift_means_no_mismatch() {
        let d = shift_diagnostics(prev(0.05), 1.0).unwrap();
        assert_eq!((d.w1, d.w0, d.delta_l1), (1.0, 1.0, 0.0));
    }

    #[test]
    fn endpoint_mismatch_values() {
        // w1 = rho / (rho*pi1 + pi0), w0 = 1 / (rho*pi1 + pi0)
        let lo = shift_diagnostics(prev(0.05), 0.9).unwrap();
        let hi = shift_diagnostics(prev(0.05), 1.1).unwrap();
        let expect_lo = (1.0 - 0.9 / 0.995) + (1.0 / 0.995 - 1.0);
        let expect_hi = (1.1 / 1.005 - 1.0) + (1.0 - 1.0 / 1.005);
        assert!((lo.delta_l1 - expect_lo).abs() < 1e-15);
        assert!((hi.delta_l1 - expect_hi).abs() < 1e-15);
        assert!((lo.delta_l1 - 0.1005).abs() < 1e-4);
        assert!((hi.delta_l1 - 0.0995).abs() < 1e-4);
        assert_eq!(lo.delta_l1, (lo.w1 - 1.0).abs() + (lo.w0 - 1.0).abs());
    }

    #[test]
    fn degenerate_prevalence_rejected() {
        assert!(matches!(
            shift_diagnostics(prev(0.0), 1.0),
            Err(Error::DegeneratePrevalence(_))
        ));
        assert!(matches!(
            shift_diagnostics(prev(1.0), 1.0),
            Err(Error::DegeneratePrevalence(_))
        ));
    }

    #[test]
    fn bound_examples() {
        let c = CostSpec::new(5.0, 1.0).unwrap();
        assert_eq!(prevalence_weighted_bound(&c, prev(0.05)), 0.95);
        let c = CostSpec::new(1.0, 1.0).unwrap();
        assert_eq!(prevalence_weighted_bound(&c, prev(0.5)), 0.5);
    }

    #[test]
    fn cost_weighted_hand_example() {
        let c = CostSpec::new(5.0, 1.0).unwrap();
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert!(matches!(
            calibrate_cost_weighted(&set(&scores, &labels), &c, 0.5),
            Err(Error::Infeasible(_))
        ));
        let big = repeat(&scores, &labels, 100);
        let r = calibrate_cost_weighted(&big, &c, 0.5).unwrap();
        assert_eq!(r.lambda, f64::from(0.8f32));
        assert_eq!(r.empirical_risk, 0.0);
        assert_eq!(r.margin, 5.0 / 201.0 + 1.0 / 201.0);
    }

    #[test]
    fn cost_weighted_vacuous_level_takes_top_candidate() {
        let c = CostSpec::new(1.0, 1.0).unwrap();
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[1, 0, 1, 0]);
        // Flag-nothing risk is c_fn * 1 = 1; margins add 2/3.
        let r = calibrate_cost_weighted(&s, &c, 1.0 + 2.0 / 3.0).unwrap();
        assert_eq!(r.lambda, ABOVE_ONE);
    }

    #[test]
    fn cost_weighted_needs_both_classes() {
        let c = CostSpec::new(5.0, 1.0).unwrap();
        assert!(matches!(
            calibrate_cost_weighted(&set(&[0.1, 0.2], &[0, 0]), &c, 0.5),
            Err(Error::NoPositives)
        ));
        assert!(matches!(
            calibrate_cost_weighted(&set(&[0.1, 0.2], &[1, 1]), &c, 0.5),
            Err(Error::NoNegatives)
        ));
    }

    #[test]
    fn no_shift_degenerates_to_single_threshold() {
        let c = CostSpec::new(5.0, 1.0).unwrap();
        let big = repeat(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], 100);
        let z = calibrate_three_way(&big, &c, 1.0, &ShiftInterval::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(z.lambda_min, z.lambda_max);
        assert_eq!(z.lambda_min, z.lambda_hat);
        assert_eq!(z.alpha_safe, z.alpha_cw - z.eps_max);
        assert_eq!(z.b_pw, 2.5);
        assert_eq!(z.shift_scale_s, 0.5);
    }

    #[test]
    fn too_wide_interval_is_infeasible() {
        let c = CostSpec::new(5.0, 1.0).unwrap();
        let big = repeat(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], 100);
        let shift = ShiftInterval::new(0.1, 10.0).unwrap();
        assert!(matches!(
            calibrate_three_way(&big, &c, 0.5, &shift),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            calibrate_three_way(&big, &c, 5.0, &ShiftInterval::new(1.0, 1.0).unwrap()),
            Err(Error::InvalidParameter(_))
        ));
    }

    fn thresholds(lambda_min: f64, lambda_max: f64) -> ZoneThresholds {
        ZoneThresholds {
            lambda_min,
            lambda_max,
            lambda_hat: lambda_min,
            alpha_cw: 0.5,
            alpha_safe: 0.4,
            eps_max: 0.1,
            b_pw: 0.95,
            shift_scale_s: 0.19,
            delta_lo_l1: 0.1,
            delta_hi_l1: 0.1,
            pi1: 0.5,
            n_valid: 4,
            cost: CostSpec::new(5.0, 1.0).unwrap(),
            shift: ShiftInterval::new(0.9, 1.1).unwrap(),
        }
    }

    #[test]
    fn all_evacuate_boundary() {
        let s = set(&[0.0, 0.3, 0.7, 1.0, 0.5], &[1, 0, 1, 0, -1]);
        let (maps, r) = assign_zones(&s, &thresholds(0.0, 0.0)).unwrap();
        assert_eq!(r.frac_evacuate, 1.0);
        assert_eq!(r.coverage, Some(1.0));
        assert_eq!(r.d_monitor, 0.0);
        assert_eq!(maps[0].zones[4], None);
        assert_eq!(r.decided_risk, Some(2.0 / 4.0));
        assert_eq!(r.decided_bound, Some(0.5));
    }

    #[test]
    fn all_monitor_has_no_decided_risk() {
        let s = set(&[0.0, 0.3, 0.7, 0.9], &[1, 0, 1, 0]);
        let (_, r) = assign_zones(&s, &thresholds(0.0, 0.95)).unwrap();
        assert_eq!(r.frac_monitor, 1.0);
        assert_eq!(r.d_monitor, 1.0);
        assert_eq!(r.decided_risk, None);
        assert_eq!(r.decided_bound, None);
        assert_eq!(r.coverage, Some(1.0));
        assert_eq!(r.coverage_evacuate, Some(0.0));
    }

    #[test]
    fn three_zones_partition() {
        let s = set(&[0.05, 0.2, 0.3, 0.6, 0.9, 0.1], &[1, 0, 1, 0, 1, 0]);
        let z = thresholds(0.15, 0.5);
        let (maps, r) = assign_zones(&s, &z).unwrap();
        assert_eq!(
            maps[0].zones,
            vec![
                Some(Zone::Safe),
                Some(Zone::Monitor),
                Some(Zone::Monitor),
                Some(Zone::Evacuate),
                Some(Zone::Evacuate),
                Some(Zone::Safe)
            ]
        );
        assert!((r.frac_safe + r.frac_monitor + r.frac_evacuate - 1.0).abs() < 1e-12);
        // decided: two SAFE (one positive), two EVACUATE (one negative)
        assert_eq!(r.decided_risk, Some((5.0 + 1.0) / 4.0));
        assert_eq!(r.coverage, Some(2.0 / 3.0));
        assert_eq!(zone_report(&s, &z).unwrap(), r);
    }
}

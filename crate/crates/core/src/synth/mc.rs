//! Monte-Carlo checks of the calibration guarantees.
//!
//! Trial `t` draws its calibration set from stream `3t`, its test set from
//! stream `3t + 1` and any auxiliary randomness from stream `3t + 2` of a
//! ChaCha8 generator seeded with the run seed. Trials run in parallel and are
//! aggregated in trial order, so results do not depend on scheduling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_with, stream_rng, BiNormalModel};
use crate::crc_binary::{calibrate_fnr, fnr_at, set_size_at};
use crate::crc_threeway::{calibrate_three_way, zone_report};
use crate::domain::{CostSpec, RiskSpec, ScoreMapSet, ShiftInterval};
use crate::error::{Error, Result};

/// Trial count and per-trial draw sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSpec {
    pub trials: usize,
    pub cal_images: usize,
    pub test_images: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl McSpec {
    /// Splits each draw into single-row images of a common width (at most
    /// 1000 pixels).
    pub fn with_pixels(trials: usize, cal_pixels: usize, test_pixels: usize, seed: u64) -> Result<Self> {
        if trials == 0 || cal_pixels == 0 || test_pixels == 0 {
            return Err(Error::InvalidParameter(
                "trials and pixel counts must be positive".into(),
            ));
        }
        let width = gcd(gcd(cal_pixels, test_pixels), 1000);
        Ok(McSpec {
            trials,
            cal_images: cal_pixels / width,
            test_images: test_pixels / width,
            height: 1,
            width,
            seed,
        })
    }

    pub fn cal_pixels(&self) -> usize {
        self.cal_images * self.height * self.width
    }

    pub fn test_pixels(&self) -> usize {
        self.test_images * self.height * self.width
    }

    fn validate(&self, model: &BiNormalModel) -> Result<()> {
        if self.trials == 0 || self.cal_pixels() == 0 || self.test_pixels() == 0 {
            return Err(Error::InvalidParameter(
                "trials and draw sizes must be positive".into(),
            ));
        }
        let expected = model.pi1 * self.cal_pixels() as f64;
        if expected < 20.0 {
            return Err(Error::TooFewPositives { expected });
        }
        Ok(())
    }

    fn calibration_draw(&self, model: &BiNormalModel, trial: usize) -> Result<ScoreMapSet> {
        let mut rng = stream_rng(self.seed, 3 * trial as u64);
        generate_with(model, model.pi1, self.cal_images, self.height, self.width, &mut rng)
    }

    fn test_draw(&self, model: &BiNormalModel, pi1: f64, trial: usize) -> Result<ScoreMapSet> {
        let mut rng = stream_rng(self.seed, 3 * trial as u64 + 1);
        generate_with(model, pi1, self.test_images, self.height, self.width, &mut rng)
    }
}

/// Aggregate of a per-trial risk across Monte-Carlo trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub trials: usize,
    /// Trials where the risk was undefined and which are left out of the
    /// mean and standard deviation.
    pub undefined_trials: usize,
    pub mean_risk: f64,
    pub std_risk: f64,
    /// Fraction of all trials whose risk exceeded its target.
    pub violation_fraction: f64,
}

impl McResult {
    fn from_trials(trials: &[(Option<f64>, bool)]) -> McResult {
        let risks: Vec<f64> = trials.iter().filter_map(|t| t.0).collect();
        let (mean, std) = mean_std(&risks);
        McResult {
            trials: trials.len(),
            undefined_trials: trials.len() - risks.len(),
            mean_risk: mean,
            std_risk: std,
            violation_fraction: trials.iter().filter(|t| t.1).count() as f64 / trials.len() as f64,
        }
    }

    /// Standard error of `mean_risk`.
    pub fn std_error(&self) -> f64 {
        let n = self.trials - self.undefined_trials;
        if n == 0 {
            f64::NAN
        } else {
            self.std_risk / (n as f64).sqrt()
        }
    }
}

/// Mean and sample standard deviation (n - 1 denominator).
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test FNR at the calibrated threshold, over independent calibration/test
/// draws from the same model. Violations are trials with FNR above `alpha`.
pub fn mc_fnr_guarantee(model: &BiNormalModel, risk: &RiskSpec, spec: &McSpec) -> Result<McResult> {
    spec.validate(model)?;
    let alpha = risk.alpha();
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let cal = spec.calibration_draw(model, t)?;
            let lambda = calibrate_fnr(&cal, risk)?.lambda_hat;
            let test = spec.test_draw(model, model.pi1, t)?;
            match fnr_at(&test, lambda) {
                Ok(fnr) => Ok((Some(fnr), fnr > alpha)),
                Err(Error::NoPositives) => Ok((None, false)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McResult::from_trials(&trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetSizeMc {
    pub trials: usize,
    pub mean_set_size: f64,
    pub std_set_size: f64,
}

/// Mean test-set size at the calibrated FNR threshold.
pub fn mc_set_size(model: &BiNormalModel, risk: &RiskSpec, spec: &McSpec) -> Result<SetSizeMc> {
    spec.validate(model)?;
    let sizes = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let cal = spec.calibration_draw(model, t)?;
            let lambda = calibrate_fnr(&cal, risk)?.lambda_hat;
            set_size_at(&spec.test_draw(model, model.pi1, t)?, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&sizes);
    Ok(SetSizeMc {
        trials: spec.trials,
        mean_set_size: mean,
        std_set_size: std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayMc {
    /// Decided-set risk against the per-trial bound `alpha_cw / (1 - d)`.
    /// Infeasible trials count as undefined.
    pub result: McResult,
    /// Trials where calibration returned infeasible. They are left out of
    /// every mean below and count against every fraction.
    pub infeasible_trials: usize,
    pub mean_bound: f64,
    pub mean_lambda_hat: f64,
    pub max_lambda_hat: f64,
    /// Trials whose calibrated `lambda_min` is exactly 0.
    pub lambda_min_zero_fraction: f64,
    /// Trials with no SAFE pixel in the test draw.
    pub safe_empty_fraction: f64,
    pub mean_frac_safe: f64,
    pub mean_frac_monitor: f64,
    pub mean_frac_evacuate: f64,
    pub mean_rho: f64,
}

struct ThreeWayTrial {
    risk: Option<f64>,
    bound: Option<f64>,
    lambda_hat: f64,
    lambda_min: f64,
    fracs: [f64; 3],
    rho: f64,
}

/// Calibrates three-way zones on each calibration draw and measures the
/// decided-set risk on a test draw at prevalence `rho * pi1`. `rho` is
/// `deploy_rho` when given, otherwise uniform over the declared interval.
pub fn mc_threeway_check(
    model: &BiNormalModel,
    cost: &CostSpec,
    alpha_cw: f64,
    shift: &ShiftInterval,
    deploy_rho: Option<f64>,
    spec: &McSpec,
) -> Result<ThreeWayMc> {
    spec.validate(model)?;
    if let Some(rho) = deploy_rho {
        if !(rho > 0.0 && rho * model.pi1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "deployment ratio {rho} gives prevalence outside (0, 1)"
            )));
        }
    }
    let all = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let cal = spec.calibration_draw(model, t)?;
            let zones = match calibrate_three_way(&cal, cost, alpha_cw, shift) {
                Ok(z) => z,
                Err(Error::Infeasible(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let rho = deploy_rho.unwrap_or_else(|| {
                let mut aux = stream_rng(spec.seed, 3 * t as u64 + 2);
                if shift.rho_lo == shift.rho_hi {
                    shift.rho_lo
                } else {
                    aux.random_range(shift.rho_lo..=shift.rho_hi)
                }
            });
            let test = spec.test_draw(model, (rho * model.pi1).min(1.0), t)?;
            let r = zone_report(&test, &zones)?;
            Ok(Some(ThreeWayTrial {
                risk: r.decided_risk,
                bound: r.decided_bound,
                lambda_hat: zones.lambda_hat,
                lambda_min: zones.lambda_min,
                fracs: [r.frac_safe, r.frac_monitor, r.frac_evacuate],
                rho,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<(Option<f64>, bool)> = all
        .iter()
        .map(|t| match t {
            Some(t) => (t.risk, matches!((t.risk, t.bound), (Some(r), Some(b)) if r > b)),
            None => (None, false),
        })
        .collect();
    let trials: Vec<&ThreeWayTrial> = all.iter().flatten().collect();
    if trials.is_empty() {
        return Err(Error::Infeasible(format!(
            "all {} trials were infeasible",
            spec.trials
        )));
    }
    let (n_all, n) = (all.len() as f64, trials.len() as f64);
    let bounds: Vec<f64> = trials.iter().filter_map(|t| t.bound).collect();
    let mean = |f: &dyn Fn(&ThreeWayTrial) -> f64| trials.iter().map(|t| f(t)).sum::<f64>() / n;
    let share = |f: &dyn Fn(&ThreeWayTrial) -> bool| {
        trials.iter().filter(|t| f(t)).count() as f64 / n_all
    };
    Ok(ThreeWayMc {
        result: McResult::from_trials(&outcomes),
        infeasible_trials: all.len() - trials.len(),
        mean_bound: mean_std(&bounds).0,
        mean_lambda_hat: mean(&|t| t.lambda_hat),
        max_lambda_hat: trials.iter().map(|t| t.lambda_hat).fold(f64::MIN, f64::max),
        lambda_min_zero_fraction: share(&|t| t.lambda_min == 0.0),
        safe_empty_fraction: share(&|t| t.fracs[0] == 0.0),
        mean_frac_safe: mean(&|t| t.fracs[0]),
        mean_frac_monitor: mean(&|t| t.fracs[1]),
        mean_frac_evacuate: mean(&|t| t.fracs[2]),
        mean_rho: mean(&|t| t.rho),
    })
}

/// Result of one `mc-check` mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McOutcome {
    Fnr(McResult),
    SetSize(SetSizeMc),
    ThreeWay(ThreeWayMc),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub pi1: f64,
    /// Trials whose calibrated `lambda_min` is 0 (SAFE zone collapsed).
    pub collapse_fraction: f64,
    pub mean_lambda_hat: f64,
    /// Mean of `s * delta_lo`, the downward offset of `lambda_min`.
    pub mean_lower_shift: f64,
}

/// SAFE-zone collapse rate as a function of prevalence, calibrating on
/// `spec.trials` draws per prevalence value.
pub fn collapse_frontier(
    model: &BiNormalModel,
    cost: &CostSpec,
    alpha_cw: f64,
    shift: &ShiftInterval,
    pi1_grid: &[f64],
    spec: &McSpec,
) -> Result<Vec<FrontierPoint>> {
    pi1_grid
        .iter()
        .map(|&pi1| {
            let m = model.with_prevalence(pi1)?;
            spec.validate(&m)?;
            let zones = (0..spec.trials)
                .into_par_iter()
                .map(|t| calibrate_three_way(&spec.calibration_draw(&m, t)?, cost, alpha_cw, shift))
                .collect::<Result<Vec<_>>>()?;
            let n = zones.len() as f64;
            Ok(FrontierPoint {
                pi1,
                collapse_fraction: zones.iter().filter(|z| z.lambda_min == 0.0).count() as f64 / n,
                mean_lambda_hat: zones.iter().map(|z| z.lambda_hat).sum::<f64>() / n,
                mean_lower_shift: zones
                    .iter()
                    .map(|z| z.shift_scale_s * z.delta_lo_l1)
                    .sum::<f64>()
                    / n,
            })
        })
        .collect()
}

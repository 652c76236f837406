//! C interface to `pixcrc`.
//!
//! Score sets live behind an opaque [`PixcrcScoreSet`] handle. Every fallible
//! call returns a [`PixcrcStatus`]; on failure the message is available from
//! [`pixcrc_last_error`] on the same thread until the next call. Results are
//! written through caller-provided out-pointers. Undefined reals (precision
//! with nothing flagged, AUROC without negatives, ...) are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use pixcrc::crc_binary::calibrate_fnr;
use pixcrc::crc_threeway::{calibrate_three_way, zone_report};
use pixcrc::{
    CostSpec, Error, ErrorClass, PixelLabel, QuantileRule, RiskSpec, ScoreMap, ScoreMapSet,
    ShiftInterval, ZoneThresholds,
};

/// Opaque handle to a validated set of score maps.
pub struct PixcrcScoreSet {
    inner: ScoreMapSet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixcrcStatus {
    Ok = 0,
    Io = 1,
    Validation = 2,
    Infeasible = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Order-statistic rule for `pixcrc_calibrate_fnr`.
pub const PIXCRC_RULE_CEIL: u32 = 0;
pub const PIXCRC_RULE_FLOOR: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixcrcCalibration {
    pub lambda_hat: f64,
    pub alpha_used: f64,
    pub m_positives: u64,
    pub quantile_index: u64,
    pub n_valid: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixcrcZones {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_hat: f64,
    pub alpha_cw: f64,
    pub alpha_safe: f64,
    pub eps_max: f64,
    pub b_pw: f64,
    pub shift_scale_s: f64,
    pub delta_lo_l1: f64,
    pub delta_hi_l1: f64,
    pub pi1: f64,
    pub n_valid: u64,
    pub c_fn: f64,
    pub c_fp: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixcrcMetrics {
    pub lambda: f64,
    pub coverage: f64,
    pub fnr: f64,
    pub set_size: f64,
    pub precision: f64,
    pub f1: f64,
    pub iou: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_count: u64,
    pub tn: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixcrcZoneReport {
    pub n_valid: u64,
    pub frac_safe: f64,
    pub frac_monitor: f64,
    pub frac_evacuate: f64,
    pub coverage: f64,
    pub coverage_evacuate: f64,
    pub set_size_flagged: f64,
    pub set_size_evacuate: f64,
    pub d_monitor: f64,
    pub decided_risk: f64,
    pub decided_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PixcrcStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PixcrcStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            PixcrcStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            match e.class() {
                ErrorClass::Io => PixcrcStatus::Io,
                ErrorClass::Validation => PixcrcStatus::Validation,
                ErrorClass::Infeasible => PixcrcStatus::Infeasible,
            }
        }
        Err(_) => {
            set_last_error("internal panic");
            PixcrcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(value);
    Ok(())
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `pixcrc_*` call on this thread.
#[no_mangle]
pub extern "C" fn pixcrc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pixcrc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a score set from a container or (`.csv`) CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_set_load(
    path: *const c_char,
    out: *mut *mut PixcrcScoreSet,
) -> PixcrcStatus {
    guard(|| {
        let path = CStr::from_ptr(deref(path, "path")?);
        let path = path
            .to_str()
            .map_err(|_| Error::InvalidParameter("path is not UTF-8".into()))?;
        let inner = pixcrc::io::load_scores(Path::new(path))?;
        write(out, Box::into_raw(Box::new(PixcrcScoreSet { inner })), "out")
    })
}

/// Builds a score set from `n_images` row-major `height x width` images laid
/// out back to back. Labels are -1 (no data), 0 or 1. `ids` may be null, in
/// which case images are numbered from 0.
///
/// # Safety
/// `scores` and `labels` must point to `n_images * height * width` elements,
/// `ids` (if not null) to `n_images`, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_set_from_buffers(
    n_images: usize,
    height: usize,
    width: usize,
    scores: *const f32,
    labels: *const i8,
    ids: *const u32,
    out: *mut *mut PixcrcScoreSet,
) -> PixcrcStatus {
    guard(|| {
        let per = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidParameter("image too large".into()))?;
        let total = per
            .checked_mul(n_images)
            .ok_or_else(|| Error::InvalidParameter("set too large".into()))?;
        if total > 0 {
            deref(scores, "scores")?;
            deref(labels, "labels")?;
        }
        let scores = if total == 0 { &[][..] } else { slice::from_raw_parts(scores, total) };
        let labels = if total == 0 { &[][..] } else { slice::from_raw_parts(labels, total) };
        let ids = (!ids.is_null()).then(|| slice::from_raw_parts(ids, n_images));
        let mut maps = Vec::with_capacity(n_images);
        for i in 0..n_images {
            let range = i * per..(i + 1) * per;
            let l = labels[range.clone()]
                .iter()
                .map(|&c| PixelLabel::try_from(c))
                .collect::<pixcrc::Result<Vec<_>>>()?;
            let id = match ids {
                Some(ids) => ids[i],
                None => u32::try_from(i)
                    .map_err(|_| Error::InvalidParameter("too many images".into()))?,
            };
            maps.push(ScoreMap::new(id, height, width, scores[range].to_vec(), l)?);
        }
        let inner = ScoreMapSet::new(maps)?;
        write(out, Box::into_raw(Box::new(PixcrcScoreSet { inner })), "out")
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `set` must come from a `pixcrc_set_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_set_free(set: *mut PixcrcScoreSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of images, valid pixels and positive pixels.
///
/// # Safety
/// `set` must be a live handle; each out-pointer must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_set_counts(
    set: *const PixcrcScoreSet,
    n_images: *mut u64,
    n_valid: *mut u64,
    n_positive: *mut u64,
) -> PixcrcStatus {
    guard(|| {
        let s = &deref(set, "set")?.inner;
        for (p, v) in [
            (n_images, s.len()),
            (n_valid, s.count_valid()),
            (n_positive, s.count_positive()),
        ] {
            if !p.is_null() {
                p.write(v as u64);
            }
        }
        Ok(())
    })
}

/// FNR-controlling threshold. `rule` is `PIXCRC_RULE_CEIL` or
/// `PIXCRC_RULE_FLOOR`.
///
/// # Safety
/// `set` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_calibrate_fnr(
    set: *const PixcrcScoreSet,
    alpha: f64,
    rule: u32,
    out: *mut PixcrcCalibration,
) -> PixcrcStatus {
    guard(|| {
        let s = &deref(set, "set")?.inner;
        let rule = match rule {
            PIXCRC_RULE_CEIL => QuantileRule::Ceil,
            PIXCRC_RULE_FLOOR => QuantileRule::Floor,
            r => return Err(Error::InvalidParameter(format!("unknown quantile rule {r}")).into()),
        };
        let r = calibrate_fnr(s, &RiskSpec::new(alpha)?.with_rule(rule))?;
        let c = PixcrcCalibration {
            lambda_hat: r.lambda_hat,
            alpha_used: r.alpha_used,
            m_positives: r.m_positives as u64,
            quantile_index: r.quantile_index as u64,
            n_valid: r.n_valid as u64,
        };
        write(out, c, "out")
    })
}

fn zones_to_c(z: &ZoneThresholds) -> PixcrcZones {
    PixcrcZones {
        lambda_min: z.lambda_min,
        lambda_max: z.lambda_max,
        lambda_hat: z.lambda_hat,
        alpha_cw: z.alpha_cw,
        alpha_safe: z.alpha_safe,
        eps_max: z.eps_max,
        b_pw: z.b_pw,
        shift_scale_s: z.shift_scale_s,
        delta_lo_l1: z.delta_lo_l1,
        delta_hi_l1: z.delta_hi_l1,
        pi1: z.pi1,
        n_valid: z.n_valid as u64,
        c_fn: z.cost.c_fn,
        c_fp: z.cost.c_fp,
        rho_lo: z.shift.rho_lo,
        rho_hi: z.shift.rho_hi,
    }
}

fn zones_from_c(z: &PixcrcZones) -> Result<ZoneThresholds, Fail> {
    Ok(ZoneThresholds {
        lambda_min: z.lambda_min,
        lambda_max: z.lambda_max,
        lambda_hat: z.lambda_hat,
        alpha_cw: z.alpha_cw,
        alpha_safe: z.alpha_safe,
        eps_max: z.eps_max,
        b_pw: z.b_pw,
        shift_scale_s: z.shift_scale_s,
        delta_lo_l1: z.delta_lo_l1,
        delta_hi_l1: z.delta_hi_l1,
        pi1: z.pi1,
        n_valid: z.n_valid as usize,
        cost: CostSpec::new(z.c_fn, z.c_fp)?,
        shift: ShiftInterval::new(z.rho_lo, z.rho_hi)?,
    })
}

/// Shift-aware three-way zone thresholds.
///
/// # Safety
/// `set` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_calibrate_three_way(
    set: *const PixcrcScoreSet,
    alpha_cw: f64,
    c_fn: f64,
    c_fp: f64,
    rho_lo: f64,
    rho_hi: f64,
    out: *mut PixcrcZones,
) -> PixcrcStatus {
    guard(|| {
        let s = &deref(set, "set")?.inner;
        let cost = CostSpec::new(c_fn, c_fp)?;
        let shift = ShiftInterval::new(rho_lo, rho_hi)?;
        let z = calibrate_three_way(s, &cost, alpha_cw, &shift)?;
        write(out, zones_to_c(&z), "out")
    })
}

/// Zone statistics of `set` under `zones`.
///
/// # Safety
/// `set` must be a live handle, `zones` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_zone_report(
    set: *const PixcrcScoreSet,
    zones: *const PixcrcZones,
    out: *mut PixcrcZoneReport,
) -> PixcrcStatus {
    guard(|| {
        let s = &deref(set, "set")?.inner;
        let z = zones_from_c(deref(zones, "zones")?)?;
        let r = zone_report(s, &z)?;
        let c = PixcrcZoneReport {
            n_valid: r.n_valid,
            frac_safe: r.frac_safe,
            frac_monitor: r.frac_monitor,
            frac_evacuate: r.frac_evacuate,
            coverage: nan_if_none(r.coverage),
            coverage_evacuate: nan_if_none(r.coverage_evacuate),
            set_size_flagged: r.set_size_flagged,
            set_size_evacuate: r.set_size_evacuate,
            d_monitor: r.d_monitor,
            decided_risk: nan_if_none(r.decided_risk),
            decided_bound: nan_if_none(r.decided_bound),
        };
        write(out, c, "out")
    })
}

/// Threshold and ranking metrics at `lambda`.
///
/// # Safety
/// `set` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_evaluate(
    set: *const PixcrcScoreSet,
    lambda: f64,
    out: *mut PixcrcMetrics,
) -> PixcrcStatus {
    guard(|| {
        let s = &deref(set, "set")?.inner;
        let r = pixcrc::metrics::evaluate(s, lambda)?;
        let m = PixcrcMetrics {
            lambda: r.lambda,
            coverage: r.coverage,
            fnr: r.fnr,
            set_size: r.set_size,
            precision: nan_if_none(r.precision),
            f1: r.f1,
            iou: r.iou,
            auroc: nan_if_none(r.auroc),
            auprc: r.auprc,
            tp: r.tp,
            fp: r.fp,
            fn_count: r.fn_,
            tn: r.tn,
        };
        write(out, m, "out")
    })
}

/// Zone code of one score: 0 SAFE, 1 MONITOR, 2 EVACUATE.
///
/// # Safety
/// `zones` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pixcrc_zone_of(
    score: f32,
    zones: *const PixcrcZones,
    out: *mut i8,
) -> PixcrcStatus {
    guard(|| {
        let z = zones_from_c(deref(zones, "zones")?)?;
        write(out, pixcrc::crc_threeway::zone_of(score, &z).code(), "out")
    })
}

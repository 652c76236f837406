use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pixcrc::{PixelLabel, ScoreMap, ScoreMapSet};
use pixcrc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pixcrc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

/// Two 10x10 images, scores i/200, positives at i >= 150, pixel 0 no-data.
fn buffers() -> (Vec<f32>, Vec<i8>) {
    let scores = (0..200).map(|i| i as f32 / 200.0).collect();
    let mut labels: Vec<i8> = (0..200).map(|i| i8::from(i >= 150)).collect();
    labels[0] = -1;
    (scores, labels)
}

fn make_set() -> *mut PixcrcScoreSet {
    let (s, l) = buffers();
    let mut set = ptr::null_mut();
    let st = unsafe {
        pixcrc_set_from_buffers(2, 10, 10, s.as_ptr(), l.as_ptr(), ptr::null(), &mut set)
    };
    assert_eq!(st, PixcrcStatus::Ok, "{}", last_error());
    set
}

#[test]
fn calibrate_and_evaluate() {
    let set = make_set();
    unsafe {
        let (mut n, mut v, mut p) = (0, 0, 0);
        assert_eq!(pixcrc_set_counts(set, &mut n, &mut v, &mut p), PixcrcStatus::Ok);
        assert_eq!((n, v, p), (2, 199, 50));

        let mut cal = PixcrcCalibration::default();
        assert_eq!(pixcrc_calibrate_fnr(set, 0.1, PIXCRC_RULE_CEIL, &mut cal), PixcrcStatus::Ok);
        assert_eq!(cal.quantile_index, 6);
        assert_eq!(cal.m_positives, 50);
        assert_eq!(cal.lambda_hat, f64::from(155.0f32 / 200.0));
        assert!(last_error().is_empty());

        let mut floor = PixcrcCalibration::default();
        assert_eq!(pixcrc_calibrate_fnr(set, 0.1, PIXCRC_RULE_FLOOR, &mut floor), PixcrcStatus::Ok);
        assert_eq!(floor.quantile_index, 5);

        let mut m = PixcrcMetrics::default();
        assert_eq!(pixcrc_evaluate(set, cal.lambda_hat, &mut m), PixcrcStatus::Ok);
        assert_eq!((m.tp, m.fn_count, m.fp), (45, 5, 0));
        assert_eq!(m.fnr, 0.1);
        assert_eq!(m.auroc, 1.0);

        // nothing flagged: precision undefined
        assert_eq!(pixcrc_evaluate(set, 1.5, &mut m), PixcrcStatus::Ok);
        assert!(m.precision.is_nan());
        pixcrc_set_free(set);
    }
}

#[test]
fn three_way_round_trip() {
    // 1000 pixels, positives on top, so the cost-weighted threshold is feasible.
    let scores: Vec<f32> = (0..1000).map(|i| i as f32 / 1000.0).collect();
    let labels: Vec<i8> = (0..1000).map(|i| i8::from(i >= 950)).collect();
    let mut set = ptr::null_mut();
    unsafe {
        let st = pixcrc_set_from_buffers(
            10, 10, 10, scores.as_ptr(), labels.as_ptr(), ptr::null(), &mut set,
        );
        assert_eq!(st, PixcrcStatus::Ok);
        let mut z = PixcrcZones::default();
        let st = pixcrc_calibrate_three_way(set, 0.5, 5.0, 1.0, 0.9, 1.1, &mut z);
        assert_eq!(st, PixcrcStatus::Ok, "{}", last_error());
        assert!(z.lambda_min <= z.lambda_max);
        assert_eq!((z.c_fn, z.rho_hi), (5.0, 1.1));

        let mut r = PixcrcZoneReport::default();
        assert_eq!(pixcrc_zone_report(set, &z, &mut r), PixcrcStatus::Ok);
        assert_eq!(r.n_valid, 1000);
        assert!((r.frac_safe + r.frac_monitor + r.frac_evacuate - 1.0).abs() < 1e-12);

        let mut code = -1i8;
        assert_eq!(pixcrc_zone_of(0.0, &z, &mut code), PixcrcStatus::Ok);
        assert_eq!(code, 0);
        assert_eq!(pixcrc_zone_of(1.0, &z, &mut code), PixcrcStatus::Ok);
        assert_eq!(code, 2);

        z.c_fn = -1.0;
        assert_eq!(pixcrc_zone_report(set, &z, &mut r), PixcrcStatus::Validation);
        pixcrc_set_free(set);
    }
}

#[test]
fn error_codes() {
    let set = make_set();
    unsafe {
        let mut cal = PixcrcCalibration::default();
        assert_eq!(
            pixcrc_calibrate_fnr(set, 1.5, PIXCRC_RULE_CEIL, &mut cal),
            PixcrcStatus::Validation
        );
        assert!(!last_error().is_empty());
        assert_eq!(pixcrc_calibrate_fnr(set, 0.1, 7, &mut cal), PixcrcStatus::Validation);
        assert!(last_error().contains("rule"));
        // k = ceil(0.9999 * 51) = 51 > m
        assert_eq!(
            pixcrc_calibrate_fnr(set, 0.9999, PIXCRC_RULE_CEIL, &mut cal),
            PixcrcStatus::Infeasible
        );
        assert_eq!(
            pixcrc_calibrate_fnr(set, 0.001, PIXCRC_RULE_FLOOR, &mut cal),
            PixcrcStatus::Infeasible
        );

        assert_eq!(
            pixcrc_calibrate_fnr(ptr::null(), 0.1, PIXCRC_RULE_CEIL, &mut cal),
            PixcrcStatus::NullPointer
        );
        assert_eq!(
            pixcrc_calibrate_fnr(set, 0.1, PIXCRC_RULE_CEIL, ptr::null_mut()),
            PixcrcStatus::NullPointer
        );
        assert!(last_error().contains("out"));

        let mut other = ptr::null_mut();
        let bad = CString::new("/nonexistent/scores.crs").unwrap();
        assert_eq!(pixcrc_set_load(bad.as_ptr(), &mut other), PixcrcStatus::Io);
        assert!(other.is_null());

        let (s, mut l) = buffers();
        l[3] = 4;
        let st = pixcrc_set_from_buffers(2, 10, 10, s.as_ptr(), l.as_ptr(), ptr::null(), &mut other);
        assert_eq!(st, PixcrcStatus::Validation);
        let ids = [7u32, 7];
        let (s, l) = buffers();
        let st = pixcrc_set_from_buffers(2, 10, 10, s.as_ptr(), l.as_ptr(), ids.as_ptr(), &mut other);
        assert_eq!(st, PixcrcStatus::Validation);
        let st = pixcrc_set_from_buffers(2, 10, 10, ptr::null(), l.as_ptr(), ptr::null(), &mut other);
        assert_eq!(st, PixcrcStatus::NullPointer);
        assert!(other.is_null());

        pixcrc_set_free(ptr::null_mut());
        pixcrc_set_free(set);
    }
}

#[test]
fn load_from_container_file() {
    let maps = vec![
        ScoreMap::new(3, 1, 4, vec![0.1, 0.9, 0.8, 0.2], vec![
            PixelLabel::Negative,
            PixelLabel::Positive,
            PixelLabel::Positive,
            PixelLabel::NoData,
        ])
        .unwrap(),
    ];
    let original = ScoreMapSet::new(maps).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.crs");
    pixcrc::io::write_container(&original, std::fs::File::create(&path).unwrap()).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut set = ptr::null_mut();
    unsafe {
        assert_eq!(pixcrc_set_load(c_path.as_ptr(), &mut set), PixcrcStatus::Ok);
        let (mut n, mut v, mut p) = (0, 0, 0);
        pixcrc_set_counts(set, &mut n, &mut v, &mut p);
        assert_eq!((n, v, p), (1, 3, 2));
        let mut cal = PixcrcCalibration::default();
        assert_eq!(pixcrc_calibrate_fnr(set, 0.5, PIXCRC_RULE_CEIL, &mut cal), PixcrcStatus::Ok);
        // k = ceil(0.5 * 3) = 2, second smallest positive
        assert_eq!(cal.lambda_hat, f64::from(0.9f32));
        pixcrc_set_free(set);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(pixcrc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pixcrc.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct PixcrcScoreSet PixcrcScoreSet;",
        "PIXCRC_STATUS_OK = 0",
        "PIXCRC_STATUS_IO = 1",
        "PIXCRC_STATUS_VALIDATION = 2",
        "PIXCRC_STATUS_INFEASIBLE = 3",
        "PIXCRC_STATUS_NULL_POINTER",
        "PIXCRC_RULE_FLOOR",
        "pixcrc_last_error(void)",
        "pixcrc_set_load(",
        "pixcrc_set_from_buffers(",
        "pixcrc_set_free(",
        "pixcrc_calibrate_fnr(",
        "pixcrc_calibrate_three_way(",
        "pixcrc_zone_report(",
        "pixcrc_evaluate(",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles tests/c/smoke.c against the header and the static library.
/// Skipped when no C compiler or no static library is available.
#[test]
fn c_smoke_test() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libpixcrc_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

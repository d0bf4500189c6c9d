use std::ffi::{CStr, CString};
use std::ptr;

use rand::SeedableRng;
use slide_core::dynamics::Interval;
use slide_core::predictor::{Predictor, PredictorKind, MARGINAL_DIM};
use slide_core::reachavoid::env::Variant;
use slide_core::reachavoid::policy::RaPolicy;
use slide_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        slide_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn null_and_missing_inputs_report_codes() {
    unsafe {
        let mut h: *mut SlidePredictor = ptr::null_mut();
        assert_eq!(slide_predictor_load(ptr::null(), &mut h), SlideStatus::NullPointer);
        let missing = CString::new("/definitely/not/here.ck").unwrap();
        assert_eq!(slide_predictor_load(missing.as_ptr(), &mut h), SlideStatus::NotFound);
        assert!(last_error().contains("checkpoint not found"));
        assert!(h.is_null());
        slide_predictor_free(ptr::null_mut());
        let mut p: *mut SlidePolicy = ptr::null_mut();
        assert_eq!(slide_policy_load(missing.as_ptr(), &mut p), SlideStatus::NotFound);
    }
}

#[test]
fn error_message_truncates_safely() {
    unsafe {
        let missing = CString::new("/nope").unwrap();
        let mut h: *mut SlidePredictor = ptr::null_mut();
        slide_predictor_load(missing.as_ptr(), &mut h);
        let mut tiny = [1 as std::ffi::c_char; 4];
        let full = slide_last_error(tiny.as_mut_ptr(), tiny.len());
        assert!(full > 3);
        assert_eq!(tiny[3], 0);
        assert_eq!(slide_last_error(ptr::null_mut(), 0), full);
    }
}

#[test]
fn predictor_round_trip_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    Predictor::new(PredictorKind::Marginal, 3).save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut h: *mut SlidePredictor = ptr::null_mut();
        assert_eq!(slide_predictor_load(c.as_ptr(), &mut h), SlideStatus::Ok);
        let (mut dim, mut kind) = (0usize, 9u32);
        assert_eq!(slide_predictor_info(h, &mut dim, &mut kind), SlideStatus::Ok);
        assert_eq!((dim, kind), (MARGINAL_DIM, 0));
        let x = vec![0.1; dim];
        let (mut lo, mut hi) = ([0.0; 2], [0.0; 2]);
        assert_eq!(slide_predictor_bound(h, x.as_ptr(), dim, 0.1, 0.05, lo.as_mut_ptr(), hi.as_mut_ptr()), SlideStatus::Ok);
        for d in 0..2 {
            assert!(-10.0 <= lo[d] && lo[d] <= hi[d] && hi[d] <= 10.0);
        }
        assert_eq!(slide_predictor_bound(h, x.as_ptr(), dim - 1, 0.1, 0.05, lo.as_mut_ptr(), hi.as_mut_ptr()), SlideStatus::InvalidArgument);
        assert_eq!(slide_predictor_bound(h, x.as_ptr(), dim, 0.1, 0.0, lo.as_mut_ptr(), hi.as_mut_ptr()), SlideStatus::InvalidArgument);
        slide_predictor_free(h);
    }
}

#[test]
fn policy_action_in_box() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ck");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    RaPolicy::new(Variant::Robust, &[16, 16], &[Interval::symmetric(15.0); 2], &[Interval::symmetric(10.0); 2], &mut rng)
        .save(&path)
        .unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut h: *mut SlidePolicy = ptr::null_mut();
        assert_eq!(slide_policy_load(c.as_ptr(), &mut h), SlideStatus::Ok);
        let mut dim = 0usize;
        assert_eq!(slide_policy_state_dim(h, &mut dim), SlideStatus::Ok);
        assert_eq!(dim, 24);
        let x = vec![0.3; dim];
        let mut u = [0.0; 2];
        assert_eq!(slide_policy_action(h, x.as_ptr(), dim, u.as_mut_ptr()), SlideStatus::Ok);
        assert!(u.iter().all(|v| v.abs() <= 15.0));
        assert_eq!(slide_policy_action(h, x.as_ptr(), 39, u.as_mut_ptr()), SlideStatus::InvalidArgument);
        slide_policy_free(h);
    }
}

#[test]
fn toy_game_solves() {
    unsafe {
        let mut g: *mut SlideToyGame = ptr::null_mut();
        assert_eq!(slide_toy_solve(21, 0.99, 1e-8, &mut g), SlideStatus::Ok);
        let (mut cells, mut sweeps, mut frac) = (0usize, 0usize, 0.0);
        assert_eq!(slide_toy_summary(g, &mut cells, &mut sweeps, &mut frac), SlideStatus::Ok);
        assert_eq!(cells, 441);
        assert!(sweeps > 0 && frac > 0.0 && frac < 1.0);
        let mut v = 0.0;
        assert_eq!(slide_toy_value(g, 220, &mut v), SlideStatus::Ok);
        assert!(v <= 0.0, "origin wins");
        assert_eq!(slide_toy_value(g, 441, &mut v), SlideStatus::InvalidArgument);
        slide_toy_free(g);
        assert_eq!(slide_toy_solve(21, 1.0, 1e-8, &mut g), SlideStatus::InvalidArgument);
        assert_eq!(slide_toy_solve(1, 0.9, 1e-8, &mut g), SlideStatus::InvalidArgument);
    }
}

#[test]
fn arm_step_conserves_rest() {
    let (q, qd, u) = ([0.3, -0.2], [0.0, 0.0], [0.0, 0.0]);
    let (mut q2, mut qd2) = ([0.0; 2], [0.0; 2]);
    unsafe {
        assert_eq!(slide_arm_step(q.as_ptr(), qd.as_ptr(), u.as_ptr(), 0.01, q2.as_mut_ptr(), qd2.as_mut_ptr()), SlideStatus::Ok);
        assert_eq!(slide_arm_step(q.as_ptr(), qd.as_ptr(), u.as_ptr(), -1.0, q2.as_mut_ptr(), qd2.as_mut_ptr()), SlideStatus::Runtime);
    }
    assert!((q2[0] - 0.3).abs() < 1e-12 && qd2.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/slide.h")).unwrap();
    for name in [
        "slide_last_error",
        "slide_version",
        "slide_predictor_load",
        "slide_predictor_bound",
        "slide_policy_action",
        "slide_toy_solve",
        "slide_arm_step",
        "SLIDE_STATUS_NOT_FOUND",
        "typedef struct SlidePredictor SlidePredictor",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let v = unsafe { CStr::from_ptr(slide_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

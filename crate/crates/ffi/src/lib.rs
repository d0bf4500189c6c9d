//! C ABI over slide-core.
//!
//! Every fallible call returns a [`SlideStatus`]; on failure the message is
//! kept per thread and read with [`slide_last_error`]. Objects are opaque
//! handles released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use slide_core::bounds::{inferred_bound, BoundConfig, DeltaLevel};
use slide_core::dynamics::{step, JointState, Torque};
use slide_core::predictor::{Predictor, PredictorKind};
use slide_core::reachavoid::env::ExtendedState;
use slide_core::reachavoid::grid::{value_iteration, GridGame, ToySpec, ViResult};
use slide_core::reachavoid::policy::{safe_policy_step, RaPolicy};
use slide_core::world::SceneConfig;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlideStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Runtime = 5,
    Panic = 6,
}

/// Trained trajectory predictor.
pub struct SlidePredictor(Predictor);

/// Trained reach-avoid policy.
pub struct SlidePolicy(RaPolicy);

/// Solved toy reach-avoid game.
pub struct SlideToyGame {
    game: GridGame,
    solution: ViResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: SlideStatus, msg: impl Into<String>) -> SlideStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> SlideStatus) -> SlideStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SlideStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, SlideStatus> {
    if path.is_null() {
        return Err(fail(SlideStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| fail(SlideStatus::InvalidArgument, "path is not UTF-8"))?;
    let p = PathBuf::from(s);
    if !p.exists() {
        return Err(fail(SlideStatus::NotFound, format!("checkpoint not found: {s}")));
    }
    Ok(p)
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn slide_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn slide_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_predictor_load(path: *const c_char, out: *mut *mut SlidePredictor) -> SlideStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlideStatus::NullPointer, "out is null");
        }
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Predictor::load(&p) {
            Ok(pred) => {
                *out = Box::into_raw(Box::new(SlidePredictor(pred)));
                SlideStatus::Ok
            }
            Err(e) => fail(SlideStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `p` must be null or a handle from [`slide_predictor_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slide_predictor_free(p: *mut SlidePredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Feature length and kind (0 marginal, 1 plan-conditioned).
///
/// # Safety
/// `p` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_predictor_info(p: *const SlidePredictor, input_dim: *mut usize, kind: *mut u32) -> SlideStatus {
    guard(|| {
        if p.is_null() || input_dim.is_null() || kind.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        let pred = &(*p).0;
        *input_dim = pred.input_dim();
        *kind = match pred.kind {
            PredictorKind::Marginal => 0,
            PredictorKind::Cbp => 1,
        };
        SlideStatus::Ok
    })
}

/// Human control bound inferred from one prediction: modes with weight at
/// least `epsilon`, each cut at `peak_fraction` of its peak density, within
/// the default human torque box. Writes two values each to `lo` and `hi`.
///
/// # Safety
/// `features` must hold `n` values; `lo` and `hi` must hold two each.
#[no_mangle]
pub unsafe extern "C" fn slide_predictor_bound(
    p: *const SlidePredictor,
    features: *const f64,
    n: usize,
    epsilon: f64,
    peak_fraction: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> SlideStatus {
    guard(|| {
        if p.is_null() || features.is_null() || lo.is_null() || hi.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        if !(peak_fraction > 0.0 && peak_fraction <= 1.0) || !(0.0..=1.0).contains(&epsilon) {
            return fail(SlideStatus::InvalidArgument, "need 0 < peak_fraction <= 1 and 0 <= epsilon <= 1");
        }
        let fv = std::slice::from_raw_parts(features, n);
        let pred = match (*p).0.predict(fv) {
            Ok(g) => g,
            Err(e) => return fail(SlideStatus::InvalidArgument, e.to_string()),
        };
        let cfg = BoundConfig { delta: DeltaLevel::PeakFraction(peak_fraction), epsilon };
        let b = inferred_bound(&pred, &cfg, &SceneConfig::default().human_params.torque_box);
        for d in 0..2 {
            *lo.add(d) = b.lo[d];
            *hi.add(d) = b.hi[d];
        }
        SlideStatus::Ok
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_policy_load(path: *const c_char, out: *mut *mut SlidePolicy) -> SlideStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlideStatus::NullPointer, "out is null");
        }
        let p = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RaPolicy::load(&p) {
            Ok(pol) => {
                *out = Box::into_raw(Box::new(SlidePolicy(pol)));
                SlideStatus::Ok
            }
            Err(e) => fail(SlideStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `p` must be null or a handle from [`slide_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slide_policy_free(p: *mut SlidePolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_policy_state_dim(p: *const SlidePolicy, out: *mut usize) -> SlideStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        *out = (*p).0.variant.state_dim();
        SlideStatus::Ok
    })
}

/// Deterministic robot torque for an extended state, within the default
/// robot torque box. Writes two values to `torque`.
///
/// # Safety
/// `state` must hold `n` values; `torque` must hold two.
#[no_mangle]
pub unsafe extern "C" fn slide_policy_action(p: *const SlidePolicy, state: *const f64, n: usize, torque: *mut f64) -> SlideStatus {
    guard(|| {
        if p.is_null() || state.is_null() || torque.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        let pol = &(*p).0;
        if n != pol.variant.state_dim() {
            return fail(SlideStatus::InvalidArgument, format!("state has {n} values, policy expects {}", pol.variant.state_dim()));
        }
        let x = std::slice::from_raw_parts(state, n).to_vec();
        if x.iter().any(|v| !v.is_finite()) {
            return fail(SlideStatus::InvalidArgument, "state is not finite");
        }
        let scene = SceneConfig::default();
        let s = ExtendedState { x, bound: slide_core::bounds::ControlBound::from_box(&scene.human_params.torque_box), prediction: None };
        let u = safe_policy_step(pol, &s, &scene.robot_params.torque_box);
        *torque = u.u[0];
        *torque.add(1) = u.u[1];
        SlideStatus::Ok
    })
}

/// Solve the `n × n` toy reach-avoid game by value iteration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_toy_solve(n: usize, gamma: f64, tol: f64, out: *mut *mut SlideToyGame) -> SlideStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlideStatus::NullPointer, "out is null");
        }
        if n < 2 {
            return fail(SlideStatus::InvalidArgument, "grid needs at least 2 points per axis");
        }
        let game = GridGame::new(ToySpec { n, ..ToySpec::default() });
        match value_iteration(&game, gamma, tol) {
            Ok(solution) => {
                *out = Box::into_raw(Box::new(SlideToyGame { game, solution }));
                SlideStatus::Ok
            }
            Err(e) => fail(SlideStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `g` must be null or a handle from [`slide_toy_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slide_toy_free(g: *mut SlideToyGame) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of cells, sweeps used, and the fraction of cells with `V ≤ 0`.
///
/// # Safety
/// `g` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_toy_summary(g: *const SlideToyGame, cells: *mut usize, sweeps: *mut usize, win_fraction: *mut f64) -> SlideStatus {
    guard(|| {
        if g.is_null() || cells.is_null() || sweeps.is_null() || win_fraction.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        let t = &*g;
        *cells = t.game.len();
        *sweeps = t.solution.sweeps();
        *win_fraction = t.solution.win_set().iter().filter(|w| **w).count() as f64 / t.game.len() as f64;
        SlideStatus::Ok
    })
}

/// Value of cell `index` (position-major).
///
/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slide_toy_value(g: *const SlideToyGame, index: usize, out: *mut f64) -> SlideStatus {
    guard(|| {
        if g.is_null() || out.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        let t = &*g;
        match t.solution.value.get(index) {
            Some(v) => {
                *out = *v;
                SlideStatus::Ok
            }
            None => fail(SlideStatus::InvalidArgument, format!("cell {index} out of range")),
        }
    })
}

/// Integrate the default robot arm for `dt` seconds under a constant torque.
/// Each pointer holds two values.
///
/// # Safety
/// All pointers must be valid for two `f64`s.
#[no_mangle]
pub unsafe extern "C" fn slide_arm_step(
    q: *const f64,
    qdot: *const f64,
    torque: *const f64,
    dt: f64,
    q_out: *mut f64,
    qdot_out: *mut f64,
) -> SlideStatus {
    guard(|| {
        if q.is_null() || qdot.is_null() || torque.is_null() || q_out.is_null() || qdot_out.is_null() {
            return fail(SlideStatus::NullPointer, "null argument");
        }
        let s = JointState::new([*q, *q.add(1)], [*qdot, *qdot.add(1)]);
        let u = Torque::new(*torque, *torque.add(1));
        match step(&SceneConfig::default().robot_params, &s, u, dt) {
            Ok(n) => {
                for d in 0..2 {
                    *q_out.add(d) = n.q[d];
                    *qdot_out.add(d) = n.qdot[d];
                }
                SlideStatus::Ok
            }
            Err(e) => fail(SlideStatus::Runtime, e.to_string()),
        }
    })
}

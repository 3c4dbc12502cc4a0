//! C ABI for pseudolab.
//!
//! Every function returns a [`PlStatus`] and writes results through out
//! pointers. On failure, [`pl_last_error`] returns a message for the calling
//! thread. Strings returned through `char **` out pointers are owned by the
//! caller and must be released with [`pl_string_free`]; handles are released
//! with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pseudolab::assign::Assigner;
use pseudolab::eval;
use pseudolab::geom::{self, BBox};
use pseudolab::gmm::{self, EmConfig, ScoreBank, ThresholdConfig, ThresholdRule, ThresholdSource};
use pseudolab::io;
use pseudolab::losses::{self, FocalParams};
use pseudolab::pyramid;
use pseudolab::Error;

/// Status codes. The nonzero library codes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    /// Malformed input: bad JSON, bad UTF-8, unreadable data.
    InputError = 2,
    /// A value breaks an invariant or inputs do not fit together.
    Invalid = 3,
    /// The computation has no meaningful result for these inputs.
    Degenerate = 4,
    NullPointer = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> PlStatus {
    let status = match e.exit_code() {
        2 => PlStatus::InputError,
        3 => PlStatus::Invalid,
        _ => PlStatus::Degenerate,
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), PlStatus>) -> PlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PlStatus::Panic
        }
    }
}

fn null(name: &str) -> PlStatus {
    set_error(format!("{name} is null"));
    PlStatus::NullPointer
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, PlStatus> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, PlStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        PlStatus::InputError
    })
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], PlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn give_string(s: String, dst: &mut *mut c_char) -> Result<(), PlStatus> {
    *dst = CString::new(s).map_err(|_| PlStatus::Panic)?.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlBBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PlBBox {
    fn to_bbox(self) -> Result<BBox, PlStatus> {
        BBox::new(self.x1, self.y1, self.x2, self.y2).map_err(fail)
    }
}

/// # Safety
/// `out_iou` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_iou(a: PlBBox, b: PlBBox, out_iou: *mut f64) -> PlStatus {
    guard(|| {
        *out(out_iou, "out_iou")? = geom::iou(&a.to_bbox()?, &b.to_bbox()?);
        Ok(())
    })
}

/// Fails with `Degenerate` when both boxes have zero area.
///
/// # Safety
/// `out_giou` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_giou(a: PlBBox, b: PlBBox, out_giou: *mut f64) -> PlStatus {
    guard(|| {
        *out(out_giou, "out_giou")? = geom::giou(&a.to_bbox()?, &b.to_bbox()?).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `out_dist` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_center_distance(a: PlBBox, b: PlBBox, out_dist: *mut f64) -> PlStatus {
    guard(|| {
        *out(out_dist, "out_dist")? = geom::center_distance(&a.to_bbox()?, &b.to_bbox()?);
        Ok(())
    })
}

/// Focal loss of probability `p` for a positive (`target` true) or negative
/// label.
///
/// # Safety
/// `out_loss` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_focal_loss(p: f64, target: bool, gamma: f64, alpha: f64, out_loss: *mut f64) -> PlStatus {
    guard(|| {
        let fp = FocalParams { gamma, alpha };
        fp.validate().map_err(fail)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(fail(Error::Invalid(format!("probability {p} outside [0, 1]"))));
        }
        *out(out_loss, "out_loss")? = losses::focal_loss(p, target, &fp);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlGmmFit {
    pub w_n: f64,
    pub w_p: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub var_n: f64,
    pub var_p: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
}

/// Two-component EM fit with default settings.
///
/// # Safety
/// `samples` must point to `len` doubles; `out_fit` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_em_fit(samples: *const f64, len: usize, out_fit: *mut PlGmmFit) -> PlStatus {
    guard(|| {
        let xs = slice(samples, len, "samples")?;
        let f = gmm::em_fit(xs, &EmConfig::default()).map_err(fail)?;
        *out(out_fit, "out_fit")? = PlGmmFit {
            w_n: f.w_n,
            w_p: f.w_p,
            mu_n: f.mu_n,
            mu_p: f.mu_p,
            var_n: f.var_n,
            var_p: f.var_p,
            iterations: f.iterations,
            log_likelihood: f.log_likelihood,
        };
        Ok(())
    })
}

/// Per-class FIFO of recent confident scores.
pub struct PlScoreBank(ScoreBank);

/// New bank holding up to `capacity` scores per class; null when `capacity`
/// is 0.
#[no_mangle]
pub extern "C" fn pl_score_bank_new(capacity: usize) -> *mut PlScoreBank {
    if capacity == 0 {
        set_error("score bank capacity must be positive".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(PlScoreBank(ScoreBank::new(capacity))))
}

/// # Safety
/// `bank` must come from [`pl_score_bank_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pl_score_bank_free(bank: *mut PlScoreBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Pushes one image's scores for a class; `out_pushed` (may be null)
/// receives how many entered the bank.
///
/// # Safety
/// `bank` must be a live handle and `scores` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_score_bank_push(
    bank: *mut PlScoreBank,
    class_id: usize,
    scores: *const f64,
    len: usize,
    out_pushed: *mut usize,
) -> PlStatus {
    guard(|| {
        let bank = out(bank, "bank")?;
        let xs = slice(scores, len, "scores")?;
        let n = bank.0.push(class_id, xs).map_err(fail)?;
        if let Some(p) = out_pushed.as_mut() {
            *p = n;
        }
        Ok(())
    })
}

/// Number of scores currently held for a class.
///
/// # Safety
/// `bank` must be a live handle; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_score_bank_len(bank: *const PlScoreBank, class_id: usize, out_len: *mut usize) -> PlStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        *out(out_len, "out_len")? = bank.0.len(class_id);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlThresholdRule {
    Argmax = 0,
    Crossing = 1,
}

/// GMM threshold for a class from the bank contents. `out_from_gmm` (may be
/// null) is set to false when the fallback was used.
///
/// # Safety
/// `bank` must be a live handle; `out_tau` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_score_bank_threshold(
    bank: *const PlScoreBank,
    class_id: usize,
    fallback_tau: f64,
    rule: PlThresholdRule,
    out_tau: *mut f64,
    out_from_gmm: *mut bool,
) -> PlStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        let cfg = ThresholdConfig {
            fallback_tau,
            rule: match rule {
                PlThresholdRule::Argmax => ThresholdRule::Argmax,
                PlThresholdRule::Crossing => ThresholdRule::Crossing,
            },
            ..ThresholdConfig::default()
        };
        let d = gmm::threshold_for_scores(&bank.0.scores(class_id), &cfg).map_err(fail)?;
        *out(out_tau, "out_tau")? = d.tau;
        if let Some(g) = out_from_gmm.as_mut() {
            *g = d.source == ThresholdSource::Gmm;
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlAssigner {
    Iou = 0,
    Atss = 1,
    Asa = 2,
}

/// Assigns a scene given as JSON (`{anchors, predictions, gts}`) with the
/// assigner's default parameters; writes `{anchors:[{state, gt, cost}]}`.
///
/// # Safety
/// `scene_json` must be a NUL-terminated string; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_assign_json(scene_json: *const c_char, assigner: PlAssigner, out_json: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let scene = io::parse_scene(text(scene_json, "scene_json")?).map_err(fail)?;
        let a = match assigner {
            PlAssigner::Iou => Assigner::iou_default(),
            PlAssigner::Atss => Assigner::atss_default(),
            PlAssigner::Asa => Assigner::asa_default(),
        };
        let r = a.assign(&scene).map_err(fail)?;
        give_string(io::assignment_to_json(&r).map_err(fail)?, out(out_json, "out_json")?)
    })
}

/// mAP@[.50:.95] of predictions JSON against ground-truth JSON; writes the
/// full result as JSON and the headline number to `out_map` (may be null).
///
/// # Safety
/// Both inputs must be NUL-terminated strings; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_eval_json(
    preds_json: *const c_char,
    gts_json: *const c_char,
    out_map: *mut f64,
    out_json: *mut *mut c_char,
) -> PlStatus {
    guard(|| {
        let preds = io::parse_predictions(text(preds_json, "preds_json")?).map_err(fail)?;
        let gts = io::parse_ground_truth(text(gts_json, "gts_json")?).map_err(fail)?;
        let r = eval::map_50_95(&preds, &gts).map_err(fail)?;
        if let Some(m) = out_map.as_mut() {
            *m = r.map_50_95;
        }
        give_string(io::eval_to_json(&r).map_err(fail)?, out(out_json, "out_json")?)
    })
}

/// In-plane then cross-level resampling of a pyramid JSON by an offsets JSON.
///
/// # Safety
/// Both inputs must be NUL-terminated strings; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_fam3d_json(pyramid_json: *const c_char, offsets_json: *const c_char, out_json: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let p = io::parse_pyramid(text(pyramid_json, "pyramid_json")?).map_err(fail)?;
        let d = io::parse_offsets(text(offsets_json, "offsets_json")?).map_err(fail)?;
        let r = pyramid::fam3d(&p, &d).map_err(fail)?;
        give_string(io::pyramid_to_json(&r).map_err(fail)?, out(out_json, "out_json")?)
    })
}

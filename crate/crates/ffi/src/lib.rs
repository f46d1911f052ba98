//! C ABI over `lyadecay`: opaque matrix and envelope handles, integer status codes,
//! and a per-thread message for the most recent failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lyadecay::field::ScalarFn;
use lyadecay::jordan::{JordanStructure, DEFAULT_REL_TOL};
use lyadecay::lyapunov::{decay_constant, DecayEnvelope, LyapunovForm};
use lyadecay::models::fp::{fp_constants, DriftField};
use lyadecay::oracle::{check_dominance, linspace, propagator_curve};
use lyadecay::{CMatrix, Error, C64};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    DimensionMismatch = 4,
    NonFinite = 5,
    NotHermitian = 6,
    NoConvergence = 7,
    RankProfile = 8,
    NotPositiveStable = 9,
    Singular = 10,
    Io = 11,
    Json = 12,
    Panic = 13,
}

impl From<&Error> for LdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => LdStatus::Shape,
            Error::DimensionMismatch(_) => LdStatus::DimensionMismatch,
            Error::NonFinite(_) => LdStatus::NonFinite,
            Error::NotHermitian { .. } => LdStatus::NotHermitian,
            Error::NoConvergence(_) => LdStatus::NoConvergence,
            Error::RankProfile { .. } => LdStatus::RankProfile,
            Error::NotPositiveStable(_) => LdStatus::NotPositiveStable,
            Error::Singular => LdStatus::Singular,
            Error::InvalidArgument(_) => LdStatus::InvalidArgument,
            Error::Io(_) => LdStatus::Io,
            Error::Json(_) => LdStatus::Json,
        }
    }
}

/// Square complex matrix.
pub struct LdMatrix(CMatrix);

/// Decay envelope for the squared propagator norm: `C e^{-2 mu t}` for `M = 1`,
/// `C (1 + t^{2(M-1)}) e^{-2 mu t}` otherwise.
pub struct LdEnvelope(DecayEnvelope);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LdEnvelopeParams {
    pub c_const: f64,
    pub mu: f64,
    pub m: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LdDominance {
    pub max_ratio: f64,
    pub dominated: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LdFpConstants {
    pub c12: f64,
    pub c3: f64,
    pub c4: f64,
    pub global: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
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

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LdStatus::Ok
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            LdStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            LdStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn write<T>(p: *mut T, name: &'static str, value: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    p.write(value);
    Ok(())
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

/// Copies the message of the last failure on this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ld_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a `dim x dim` matrix from row-major real and imaginary parts; `im` may be null.
///
/// # Safety
/// `re` (and `im` if non-null) must point to `dim * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_matrix_new(
    dim: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut LdMatrix,
) -> LdStatus {
    guard(|| {
        if re.is_null() {
            return Err(Fail::Null("re"));
        }
        let n = dim.checked_mul(dim).ok_or_else(|| Error::InvalidArgument("dimension overflows".into()))?;
        let re = std::slice::from_raw_parts(re, n);
        let data: Vec<C64> = if im.is_null() {
            re.iter().map(|&x| C64::new(x, 0.0)).collect()
        } else {
            let im = std::slice::from_raw_parts(im, n);
            re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect()
        };
        let m = CMatrix::new(dim, data)?;
        emit(out, LdMatrix(m))
    })
}

/// Parses `{"dim": d, "entries": [[re, im], ...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_matrix_from_json(json: *const c_char, out: *mut *mut LdMatrix) -> LdStatus {
    guard(|| {
        if json.is_null() {
            return Err(Fail::Null("json"));
        }
        let s = CStr::from_ptr(json).to_str().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let m = CMatrix::from_json_str(s)?;
        emit(out, LdMatrix(m))
    })
}

/// Dimension of the matrix, 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle from `ld_matrix_new`/`ld_matrix_from_json`.
#[no_mangle]
pub unsafe extern "C" fn ld_matrix_dim(m: *const LdMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// # Safety
/// `m` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ld_matrix_free(m: *mut LdMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Jordan analysis with default weights; `rel_tol <= 0` selects the default tolerance.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_analyze(m: *const LdMatrix, rel_tol: f64, out: *mut *mut LdEnvelope) -> LdStatus {
    guard(|| {
        let m = deref(m, "m")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let tol = if rel_tol > 0.0 { rel_tol } else { DEFAULT_REL_TOL };
        let form = LyapunovForm::new(JordanStructure::compute(&m.0, tol)?)?;
        let env = decay_constant(&form)?;
        emit(out, LdEnvelope(env))
    })
}

/// Envelope from explicit parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_envelope_new(params: LdEnvelopeParams, out: *mut *mut LdEnvelope) -> LdStatus {
    guard(|| {
        if !(params.c_const > 0.0 && params.c_const.is_finite() && params.mu.is_finite() && params.m >= 1) {
            return Err(Error::InvalidArgument("need C > 0, finite mu and M >= 1".into()).into());
        }
        let env = DecayEnvelope { c_const: params.c_const, mu: params.mu, m: params.m };
        emit(out, LdEnvelope(env))
    })
}

/// # Safety
/// `e` must be a live envelope handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_envelope_params(e: *const LdEnvelope, out: *mut LdEnvelopeParams) -> LdStatus {
    guard(|| {
        let e = &deref(e, "e")?.0;
        write(out, "out", LdEnvelopeParams { c_const: e.c_const, mu: e.mu, m: e.m })
    })
}

/// # Safety
/// `e` must be a live envelope handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_envelope_eval(e: *const LdEnvelope, t: f64, out: *mut f64) -> LdStatus {
    guard(|| {
        let v = deref(e, "e")?.0.eval(t)?;
        write(out, "out", v)
    })
}

/// # Safety
/// `e` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ld_envelope_free(e: *mut LdEnvelope) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// `|e^{-C t}|_2^2`.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_propagator_norm_sq(m: *const LdMatrix, t: f64, out: *mut f64) -> LdStatus {
    guard(|| {
        let v = propagator_curve(&deref(m, "m")?.0, &[t])?[0];
        write(out, "out", v)
    })
}

/// Compares the envelope with the exact squared propagator norm on `n_times` evenly
/// spaced times in `[0, t_max]`.
///
/// # Safety
/// `m` and `e` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_check_dominance(
    m: *const LdMatrix,
    e: *const LdEnvelope,
    t_max: f64,
    n_times: usize,
    out: *mut LdDominance,
) -> LdStatus {
    guard(|| {
        let (m, e) = (deref(m, "m")?, deref(e, "e")?);
        if !(t_max >= 0.0 && t_max.is_finite()) || n_times < 2 {
            return Err(Error::InvalidArgument("need t_max >= 0 and n_times >= 2".into()).into());
        }
        let r = check_dominance(&m.0, &e.0, &linspace(0.0, t_max, n_times))?;
        write(out, "out", LdDominance { max_ratio: r.max_ratio, dominated: r.dominated })
    })
}

/// Fokker-Planck constants for a drift with infimum `a0` and `sup |a_z| = sup_da`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_fp_constants(a0: f64, sup_da: f64, out: *mut LdFpConstants) -> LdStatus {
    guard(|| {
        let field = DriftField::new(ScalarFn::constant(a0), a0, sup_da)?;
        let c = fp_constants(&field);
        write(out, "out", LdFpConstants { c12: c.c12, c3: c.c3, c4: c.c4, global: c.global })
    })
}

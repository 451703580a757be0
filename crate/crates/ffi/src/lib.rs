//! C interface to lsdeconv.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns an
//! [`LsdStatus`]; on failure the message is kept per thread and can be read
//! with [`lsd_last_error`]. Panics are caught and reported as
//! [`LsdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lsdeconv::config::PsfModel;
use lsdeconv::fidelity::BoxBounds;
use lsdeconv::forward::{Boundary, LinearOperator};
use lsdeconv::solver::{self, MethodVariant, OperatorSet, ReconResult, SolverParams};
use lsdeconv::volume::{load_volume, save_volume};
use lsdeconv::{Dims, Error, Volume};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Solver = 7,
    Config = 8,
    Panic = 9,
}

/// Selects the forward model and data term.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsdVariant {
    LsIc = 0,
    LsL2 = 1,
    PsfIc = 2,
    PsfL2 = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsdBoundary {
    ZeroPad = 0,
    Circular = 1,
}

/// A dense 3D field, x fastest.
pub struct LsdVolume(Volume);

/// Both forward models built from one illumination profile and PSF.
pub struct LsdOperators(OperatorSet);

/// Output of one reconstruction.
pub struct LsdResult(ReconResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> LsdStatus {
    match err {
        Error::DimensionMismatch { .. } => LsdStatus::DimensionMismatch,
        Error::InvalidDims(_) | Error::InvalidParameter(_) | Error::SizeGuard(_) => LsdStatus::InvalidArgument,
        Error::NonFinite(_) => LsdStatus::NonFinite,
        Error::Io { .. } => LsdStatus::Io,
        Error::MalformedHeader { .. } | Error::TruncatedPayload { .. } | Error::Tiff(_) => LsdStatus::Format,
        Error::Solver { .. } => LsdStatus::Solver,
        Error::Config(_) | Error::Json(_) => LsdStatus::Config,
    }
}

struct Fail(LsdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LsdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LsdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: caller guarantees p is null or a live handle from this library
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(LsdStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: out is non-null and points to writable storage per the contract
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: p came from Box::into_raw in this library and is freed once
        drop(unsafe { Box::from_raw(p) });
    }
}

impl From<LsdVariant> for MethodVariant {
    fn from(v: LsdVariant) -> Self {
        match v {
            LsdVariant::LsIc => MethodVariant::LsIc,
            LsdVariant::LsL2 => MethodVariant::LsL2,
            LsdVariant::PsfIc => MethodVariant::PsfIc,
            LsdVariant::PsfL2 => MethodVariant::PsfL2,
        }
    }
}

impl From<LsdBoundary> for Boundary {
    fn from(b: LsdBoundary) -> Self {
        match b {
            LsdBoundary::ZeroPad => Boundary::ZeroPad,
            LsdBoundary::Circular => Boundary::Circular,
        }
    }
}

/// Copies the last error of this thread into `buf`, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length without the
/// terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lsd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: buf holds at least len bytes and n < len
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a volume by copying `nx·ny·nz` values from `data`.
///
/// # Safety
/// `data` must be valid for `nx·ny·nz` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    data: *const f64,
    out: *mut *mut LsdVolume,
) -> LsdStatus {
    guard(|| {
        let dims = Dims::new(nx, ny, nz)?;
        if data.is_null() {
            return Err(null("data"));
        }
        // SAFETY: caller guarantees dims.len() readable values
        let values = unsafe { std::slice::from_raw_parts(data, dims.len()) }.to_vec();
        write_out(out, LsdVolume(Volume::from_vec(dims, values)?))
    })
}

/// Reads a volume file (raw payload with JSON sidecar).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_load(path: *const c_char, out: *mut *mut LsdVolume) -> LsdStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        write_out(out, LsdVolume(load_volume(path)?))
    })
}

/// # Safety
/// `vol` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_save(vol: *const LsdVolume, path: *const c_char) -> LsdStatus {
    guard(|| {
        let vol = unsafe { borrow(vol, "volume") }?;
        let path = unsafe { str_arg(path, "path") }?;
        save_volume(&vol.0, path)?;
        Ok(())
    })
}

/// Writes the three extents into `dims`.
///
/// # Safety
/// `vol` must be a live handle; `dims` valid for three writes.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_dims(vol: *const LsdVolume, dims: *mut usize) -> LsdStatus {
    guard(|| {
        let vol = unsafe { borrow(vol, "volume") }?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = vol.0.dims().as_array();
        // SAFETY: dims holds three elements
        unsafe { ptr::copy_nonoverlapping(d.as_ptr(), dims, 3) };
        Ok(())
    })
}

/// Copies the values into `buf`, which must hold exactly `len` elements.
///
/// # Safety
/// `vol` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_copy_data(vol: *const LsdVolume, buf: *mut f64, len: usize) -> LsdStatus {
    guard(|| {
        let vol = unsafe { borrow(vol, "volume") }?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let src = vol.0.as_slice();
        if len != src.len() {
            return Err(Fail(
                LsdStatus::InvalidArgument,
                format!("buffer holds {len} values, volume has {}", src.len()),
            ));
        }
        // SAFETY: buf holds len == src.len() elements
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, len) };
        Ok(())
    })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsd_volume_free(vol: *mut LsdVolume) {
    unsafe { free_handle(vol) }
}

/// Synthesises the detection PSF and the illumination profile from a JSON
/// optics model (the `model` section of a run configuration). Either output
/// may be null to skip it.
///
/// # Safety
/// `model_json` must be a NUL-terminated string; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_psf_from_json(
    model_json: *const c_char,
    out_kernel: *mut *mut LsdVolume,
    out_illumination: *mut *mut LsdVolume,
) -> LsdStatus {
    guard(|| {
        let text = unsafe { str_arg(model_json, "model_json") }?;
        let model: PsfModel = serde_json::from_str(text).map_err(|e| Fail(LsdStatus::Config, e.to_string()))?;
        model.validate()?;
        if !out_kernel.is_null() {
            write_out(out_kernel, LsdVolume(model.detection()?))?;
        }
        if !out_illumination.is_null() {
            write_out(out_illumination, LsdVolume(model.illumination()?))?;
        }
        Ok(())
    })
}

/// Builds the light-sheet and plain-convolution models. Inputs are copied.
///
/// # Safety
/// `illumination` and `kernel` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_operators_new(
    illumination: *const LsdVolume,
    kernel: *const LsdVolume,
    boundary: LsdBoundary,
    out: *mut *mut LsdOperators,
) -> LsdStatus {
    guard(|| {
        let l = unsafe { borrow(illumination, "illumination") }?;
        let h = unsafe { borrow(kernel, "kernel") }?;
        let ops = OperatorSet::from_psfs(l.0.clone(), h.0.clone(), boundary.into())?;
        write_out(out, LsdOperators(ops))
    })
}

/// Applies the forward model of `variant` to `u`.
///
/// # Safety
/// `ops` and `u` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_forward(
    ops: *const LsdOperators,
    variant: LsdVariant,
    u: *const LsdVolume,
    out: *mut *mut LsdVolume,
) -> LsdStatus {
    guard(|| {
        let ops = unsafe { borrow(ops, "operators") }?;
        let u = unsafe { borrow(u, "u") }?;
        let f = ops.0.operator(variant.into())?.apply(&u.0)?;
        write_out(out, LsdVolume(f))
    })
}

/// # Safety
/// `ops` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsd_operators_free(ops: *mut LsdOperators) {
    unsafe { free_handle(ops) }
}

/// Reconstructs from `data`. `params_json` holds solver parameters as a JSON
/// object; missing fields take their defaults and null means all defaults.
/// The intensity box is `[0, box_factor·max data]`.
///
/// # Safety
/// Handles must be live; `params_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_deconvolve(
    ops: *const LsdOperators,
    data: *const LsdVolume,
    variant: LsdVariant,
    sigma_g: f64,
    box_factor: f64,
    params_json: *const c_char,
    out: *mut *mut LsdResult,
) -> LsdStatus {
    guard(|| {
        let ops = unsafe { borrow(ops, "operators") }?;
        let data = unsafe { borrow(data, "data") }?;
        let params: SolverParams = if params_json.is_null() {
            SolverParams::default()
        } else {
            let text = unsafe { str_arg(params_json, "params_json") }?;
            serde_json::from_str(text).map_err(|e| Fail(LsdStatus::Config, e.to_string()))?
        };
        params.validate()?;
        if !(box_factor.is_finite() && box_factor > 0.0) {
            return Err(Fail(
                LsdStatus::InvalidArgument,
                format!("box_factor must be positive, got {box_factor}"),
            ));
        }
        let bounds: BoxBounds = solver::default_bounds(&data.0, box_factor)?;
        let problem =
            solver::build_problem_with_seed(variant.into(), &ops.0, data.0.clone(), sigma_g, bounds, params.seed)?;
        let result = solver::pdhg_run(&problem, &params, None)?;
        write_out(out, LsdResult(result))
    })
}

/// Copies the reconstructed volume into a new handle.
///
/// # Safety
/// `res` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_result_volume(res: *const LsdResult, out: *mut *mut LsdVolume) -> LsdStatus {
    guard(|| {
        let res = unsafe { borrow(res, "result") }?;
        write_out(out, LsdVolume(res.0.u.clone()))
    })
}

/// Iterations run, final normalised gap and convergence flag. Any output
/// pointer may be null.
///
/// # Safety
/// `res` must be a live handle; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_result_summary(
    res: *const LsdResult,
    iterations: *mut usize,
    gap: *mut f64,
    converged: *mut bool,
) -> LsdStatus {
    guard(|| {
        let res = &unsafe { borrow(res, "result") }?.0;
        // SAFETY: each pointer is checked for null and writable per the contract
        unsafe {
            if !iterations.is_null() {
                *iterations = res.iterations;
            }
            if !gap.is_null() {
                *gap = res.gap;
            }
            if !converged.is_null() {
                *converged = res.converged;
            }
        }
        Ok(())
    })
}

/// Gap history as a newly allocated JSON string; release it with
/// [`lsd_string_free`].
///
/// # Safety
/// `res` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsd_result_log_json(res: *const LsdResult, out: *mut *mut c_char) -> LsdStatus {
    guard(|| {
        let res = unsafe { borrow(res, "result") }?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = CString::new(res.0.log_json()?).map_err(|e| Fail(LsdStatus::Format, e.to_string()))?;
        // SAFETY: out is non-null and writable
        unsafe { *out = text.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsd_result_free(res: *mut LsdResult) {
    unsafe { free_handle(res) }
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lsd_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: s came from CString::into_raw in this library
        drop(unsafe { CString::from_raw(s) });
    }
}

//! C ABI for repsim.
//!
//! Every fallible function returns a [`RepsimStatus`] and writes its result
//! through an out-pointer. On failure a message is available from
//! [`repsim_last_error`] on the calling thread. Handles are opaque and must be
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use repsim::diagnostics::{latent_stats, per_dim_kl, PassiveThresholds, Verdict};
use repsim::io::{read_act_file, read_checkpoint_file, write_act_file, ActivationFile, ModelCheckpoint};
use repsim::metrics::{linear_cka, procrustes_similarity};
use repsim::vae::{capture_activations, ActivationCapture};
use repsim::{Error, Matrix};

/// Status codes; the nonzero values match the `repsim` CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepsimStatus {
    Ok = 0,
    /// Bad arguments, malformed files or I/O failure.
    InvalidInput = 2,
    /// Zero-variance or otherwise degenerate activations.
    Degenerate = 3,
    /// Non-finite values, divergence or SVD non-convergence.
    Numerical = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepsimVerdict {
    HealthyPolarised = 0,
    Collapsed = 1,
    NoPassiveDims = 2,
}

/// Row-major matrix of doubles.
pub struct RepsimMatrix(Matrix);

/// A trained VAE checkpoint.
pub struct RepsimModel(ModelCheckpoint);

/// Per-layer activations of a model on an evaluation set.
pub struct RepsimCapture {
    capture: ActivationCapture,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RepsimStatus {
    match e.exit_code() {
        3 => RepsimStatus::Degenerate,
        4 => RepsimStatus::Numerical,
        _ => RepsimStatus::InvalidInput,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> RepsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            RepsimStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            RepsimStatus::Internal
        }
    }
}

fn null(what: &str) -> Error {
    Error::InvalidInput(format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Error> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Error> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Error> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the most recent failure on this thread; empty after a success.
/// The pointer stays valid until the next repsim call on the same thread.
#[no_mangle]
pub extern "C" fn repsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn repsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` row-major values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles (it may be null when
/// that product is zero) and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut RepsimMatrix,
) -> RepsimStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidInput("matrix size overflows".into()))?;
        let values = if len == 0 {
            Vec::new()
        } else if data.is_null() {
            return Err(null("data"));
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        put(out, RepsimMatrix(Matrix::new(rows, cols, values)?))
    })
}

/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_free(m: *mut RepsimMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_rows(m: *const RepsimMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_cols(m: *const RepsimMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Borrowed row-major values, valid while the handle lives.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_data(m: *const RepsimMatrix) -> *const f64 {
    m.as_ref().map_or(ptr::null(), |m| m.0.data().as_ptr())
}

/// Reads the matrix stored in an activation file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_read_act(path: *const c_char, out: *mut *mut RepsimMatrix) -> RepsimStatus {
    guard(|| {
        let file = read_act_file(&path_arg(path)?)?;
        put(out, RepsimMatrix(file.matrix))
    })
}

/// Writes `m` as an activation file labelled with `layer_name` (may be null).
///
/// # Safety
/// `m` must be a live matrix handle; `path` and `layer_name` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn repsim_matrix_write_act(
    m: *const RepsimMatrix,
    path: *const c_char,
    layer_name: *const c_char,
) -> RepsimStatus {
    guard(|| {
        let m = borrow(m, "matrix")?;
        let layer_name = if layer_name.is_null() {
            String::new()
        } else {
            CStr::from_ptr(layer_name).to_string_lossy().into_owned()
        };
        write_act_file(
            &path_arg(path)?,
            &ActivationFile {
                layer_name,
                model_id: String::new(),
                epoch: 0,
                matrix: m.0.clone(),
            },
        )
    })
}

/// Linear CKA between two activation matrices with matching row counts.
///
/// # Safety
/// `x` and `y` must be live matrix handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_cka(x: *const RepsimMatrix, y: *const RepsimMatrix, out: *mut f64) -> RepsimStatus {
    guard(|| {
        let v = linear_cka(&borrow(x, "x")?.0, &borrow(y, "y")?.0)?.value;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = v;
        Ok(())
    })
}

/// Orthogonal Procrustes similarity in [0, 1].
///
/// # Safety
/// `x` and `y` must be live matrix handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_procrustes(
    x: *const RepsimMatrix,
    y: *const RepsimMatrix,
    out: *mut f64,
) -> RepsimStatus {
    guard(|| {
        let v = procrustes_similarity(&borrow(x, "x")?.0, &borrow(y, "y")?.0)?.value;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = v;
        Ok(())
    })
}

/// Loads a model checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_model_load(path: *const c_char, out: *mut *mut RepsimModel) -> RepsimStatus {
    guard(|| put(out, RepsimModel(read_checkpoint_file(&path_arg(path)?)?)))
}

/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_model_free(m: *mut RepsimModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_model_latent_dim(m: *const RepsimModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.model.latent_dim())
}

/// Runs `images` (one flattened image per row) through the model and keeps
/// every layer. Sampling noise is seeded from the checkpoint's training seed.
///
/// # Safety
/// `model` and `images` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_model_capture(
    model: *const RepsimModel,
    images: *const RepsimMatrix,
    out: *mut *mut RepsimCapture,
) -> RepsimStatus {
    guard(|| {
        let ckpt = &borrow(model, "model")?.0;
        let capture = capture_activations(&ckpt.model, &borrow(images, "images")?.0, ckpt.seed)?;
        let names = capture
            .layer_names()
            .into_iter()
            .map(|n| CString::new(n).unwrap_or_default())
            .collect();
        put(out, RepsimCapture { capture, names })
    })
}

/// # Safety
/// `c` must be null or a live capture handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_capture_free(c: *mut RepsimCapture) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be null or a live capture handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_capture_layer_count(c: *const RepsimCapture) -> usize {
    c.as_ref().map_or(0, |c| c.names.len())
}

/// Name of layer `index`, or null when out of range. Valid while the handle lives.
///
/// # Safety
/// `c` must be null or a live capture handle.
#[no_mangle]
pub unsafe extern "C" fn repsim_capture_layer_name(c: *const RepsimCapture, index: usize) -> *const c_char {
    c.as_ref()
        .and_then(|c| c.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Copies the named layer into a new matrix.
///
/// # Safety
/// `c` must be a live capture handle, `name` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_capture_layer(
    c: *const RepsimCapture,
    name: *const c_char,
    out: *mut *mut RepsimMatrix,
) -> RepsimStatus {
    guard(|| {
        let c = borrow(c, "capture")?;
        if name.is_null() {
            return Err(null("layer name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        let layer = c
            .capture
            .layer(&name)
            .ok_or_else(|| Error::InvalidInput(format!("no layer named '{name}'")))?;
        put(out, RepsimMatrix(layer.clone()))
    })
}

/// Latent verdict under the default passive-dimension thresholds.
/// `active` and `passive` may be null.
///
/// # Safety
/// `c` must be a live capture handle and `verdict` writable.
#[no_mangle]
pub unsafe extern "C" fn repsim_capture_verdict(
    c: *const RepsimCapture,
    verdict: *mut RepsimVerdict,
    active: *mut usize,
    passive: *mut usize,
) -> RepsimStatus {
    guard(|| {
        let cap = &borrow(c, "capture")?.capture;
        let diag = latent_stats(cap, &per_dim_kl(cap)?, &PassiveThresholds::default())?;
        *verdict.as_mut().ok_or_else(|| null("verdict"))? = match diag.verdict {
            Verdict::HealthyPolarised => RepsimVerdict::HealthyPolarised,
            Verdict::Collapsed => RepsimVerdict::Collapsed,
            Verdict::NoPassiveDims => RepsimVerdict::NoPassiveDims,
        };
        if let Some(a) = active.as_mut() {
            *a = diag.active_count();
        }
        if let Some(p) = passive.as_mut() {
            *p = diag.passive_count();
        }
        Ok(())
    })
}

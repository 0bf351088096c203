//! C interface to the QNN simulator and to checkpointed model inference.
//!
//! Every function returns a [`QvitStatus`]. On failure a description is kept
//! per thread and can be read with [`qvit_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qvit::model::{checkpoint, Model, ModelError};
use qvit::qnn::{qnn_forward_fast, qnn_forward_with_gradients, QnnError, QnnSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QvitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Internal = 5,
}

/// Parameterised ring QNN.
pub struct QvitQnn {
    spec: QnnSpec,
}

/// Model restored from a checkpoint.
pub struct QvitModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: QvitStatus, msg: impl Into<String>) -> QvitStatus {
    set_error(msg);
    status
}

fn qnn_status(e: QnnError) -> QvitStatus {
    fail(QvitStatus::InvalidArgument, e.to_string())
}

fn model_status(e: ModelError) -> QvitStatus {
    let status = match e {
        ModelError::Io(_) => QvitStatus::Io,
        ModelError::Format(_) | ModelError::ParamShape { .. } | ModelError::UnknownParam(_) | ModelError::Config(_) => {
            QvitStatus::Format
        }
        _ => QvitStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting a panic into [`QvitStatus::Internal`].
fn guard(f: impl FnOnce() -> QvitStatus) -> QvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(QvitStatus::Internal, "internal panic"),
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(p, len))
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qvit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qvit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a ring-topology QNN on `n_qubits` qubits with `2 * n_qubits`
/// angles.
///
/// # Safety
/// `params` must be valid for `n_params` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qvit_qnn_new(
    n_qubits: usize,
    params: *const f64,
    n_params: usize,
    out: *mut *mut QvitQnn,
) -> QvitStatus {
    guard(|| {
        if out.is_null() {
            return fail(QvitStatus::NullPointer, "out is null");
        }
        let Some(p) = slice(params, n_params) else {
            return fail(QvitStatus::NullPointer, "params is null");
        };
        match QnnSpec::ring(n_qubits, p.to_vec()) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(QvitQnn { spec }));
                QvitStatus::Ok
            }
            Err(e) => qnn_status(e),
        }
    })
}

/// # Safety
/// `qnn` must be null or a handle from [`qvit_qnn_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qvit_qnn_free(qnn: *mut QvitQnn) {
    if !qnn.is_null() {
        drop(Box::from_raw(qnn));
    }
}

/// # Safety
/// `qnn` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qvit_qnn_n_qubits(qnn: *const QvitQnn) -> usize {
    qnn.as_ref().map_or(0, |q| q.spec.n_qubits())
}

/// Writes the per-qubit `<Z>` readout for input angles `x` into `y`.
///
/// # Safety
/// `x` and `y` must be valid for `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn qvit_qnn_forward(qnn: *const QvitQnn, x: *const f64, y: *mut f64, n: usize) -> QvitStatus {
    guard(|| {
        let Some(q) = qnn.as_ref() else { return fail(QvitStatus::NullPointer, "qnn is null") };
        if n != q.spec.n_qubits() {
            return fail(QvitStatus::InvalidArgument, format!("length {n} does not match {} qubits", q.spec.n_qubits()));
        }
        let (Some(x), Some(y)) = (slice(x, n), slice_mut(y, n)) else {
            return fail(QvitStatus::NullPointer, "x or y is null");
        };
        match qnn_forward_fast(x, &q.spec) {
            Ok(v) => {
                y.copy_from_slice(&v);
                QvitStatus::Ok
            }
            Err(e) => qnn_status(e),
        }
    })
}

/// Outputs and full Jacobians. `d_input` is `n x n` and `d_params` is
/// `n x 2n`, both row-major with one row per output.
///
/// # Safety
/// `x`, `y` hold `n` doubles, `d_input` `n*n`, `d_params` `2*n*n`.
#[no_mangle]
pub unsafe extern "C" fn qvit_qnn_gradients(
    qnn: *const QvitQnn,
    x: *const f64,
    n: usize,
    y: *mut f64,
    d_input: *mut f64,
    d_params: *mut f64,
) -> QvitStatus {
    guard(|| {
        let Some(q) = qnn.as_ref() else { return fail(QvitStatus::NullPointer, "qnn is null") };
        if n != q.spec.n_qubits() {
            return fail(QvitStatus::InvalidArgument, format!("length {n} does not match {} qubits", q.spec.n_qubits()));
        }
        let (Some(x), Some(y), Some(di), Some(dp)) =
            (slice(x, n), slice_mut(y, n), slice_mut(d_input, n * n), slice_mut(d_params, 2 * n * n))
        else {
            return fail(QvitStatus::NullPointer, "null buffer");
        };
        match qnn_forward_with_gradients(x, &q.spec) {
            Ok((out, g)) => {
                y.copy_from_slice(&out);
                di.copy_from_slice(&g.d_output_d_input);
                dp.copy_from_slice(&g.d_output_d_params);
                QvitStatus::Ok
            }
            Err(e) => qnn_status(e),
        }
    })
}

/// Loads a checkpoint written by the `qvit` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_load(path: *const c_char, out: *mut *mut QvitModel) -> QvitStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(QvitStatus::NullPointer, "path or out is null");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(QvitStatus::InvalidArgument, "path is not UTF-8");
        };
        match checkpoint::load(std::path::Path::new(p)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(QvitModel { model }));
                QvitStatus::Ok
            }
            Err(e) => model_status(e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from [`qvit_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_free(model: *mut QvitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Values per input image (`C * H * W`), 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_image_len(model: *const QvitModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.image_len())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_n_classes(model: *const QvitModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.n_classes)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_n_parameters(model: *const QvitModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_parameters())
}

/// Logits for one `[C, H, W]` image whose pixels are already mapped to angles.
///
/// # Safety
/// `image` holds `image_len` doubles and `logits` holds `n_classes`.
#[no_mangle]
pub unsafe extern "C" fn qvit_model_predict(
    model: *const QvitModel,
    image: *const f64,
    image_len: usize,
    logits: *mut f64,
    n_classes: usize,
) -> QvitStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return fail(QvitStatus::NullPointer, "model is null") };
        if n_classes != m.model.config.n_classes {
            return fail(
                QvitStatus::InvalidArgument,
                format!("logit buffer holds {n_classes}, model has {} classes", m.model.config.n_classes),
            );
        }
        let (Some(img), Some(out)) = (slice(image, image_len), slice_mut(logits, n_classes)) else {
            return fail(QvitStatus::NullPointer, "image or logits is null");
        };
        match m.model.predict(img) {
            Ok(v) => {
                out.copy_from_slice(&v);
                QvitStatus::Ok
            }
            Err(e) => model_status(e),
        }
    })
}

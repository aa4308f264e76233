//! C ABI over the decoder library: opaque handles, integer error codes,
//! and a thread-local last-error message.
//!
//! Every function that can fail returns an `int` status (`EMCAD_OK` on
//! success); `emcad_last_error` retrieves the message for the most
//! recent failure on the calling thread. Handles are created and
//! destroyed by matching `_new`/`_free` pairs; passing a handle after
//! freeing it is undefined behavior, as in any C API.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::ptr;

use emcad_core::cost::{count_flops, count_params, FlopMode};
use emcad_core::decoder::{build_decoder, decoder_forward, Decoder, DecoderConfig, PyramidFeatures};
use emcad_core::tensor::Tensor4D;
use emcad_core::Error;

/// Success.
pub const EMCAD_OK: c_int = 0;
/// A required pointer argument was null or an argument was invalid.
pub const EMCAD_ERR_ARG: c_int = 1;
/// Tensor shapes violate an operation's preconditions.
pub const EMCAD_ERR_SHAPE: c_int = 2;
/// Invalid configuration.
pub const EMCAD_ERR_CONFIG: c_int = 3;
/// Malformed serialized data.
pub const EMCAD_ERR_FORMAT: c_int = 4;
/// Underlying I/O failure.
pub const EMCAD_ERR_IO: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code_for(err: &Error) -> c_int {
    match err {
        Error::Shape(_) => EMCAD_ERR_SHAPE,
        Error::Config(_) => EMCAD_ERR_CONFIG,
        Error::Format(_) => EMCAD_ERR_FORMAT,
        Error::Io(_) => EMCAD_ERR_IO,
    }
}

fn fail(err: Error) -> c_int {
    let code = code_for(&err);
    set_error(err.to_string());
    code
}

fn arg_error(msg: &str) -> c_int {
    set_error(msg);
    EMCAD_ERR_ARG
}

/// Opaque NCHW f32 tensor handle.
pub struct EmcadTensor {
    inner: Tensor4D,
}

/// Opaque decoder handle; immutable after creation.
pub struct EmcadDecoder {
    inner: Decoder,
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length in
/// bytes, excluding the terminator.
#[no_mangle]
pub extern "C" fn emcad_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Creates a tensor from a row-major NCHW buffer of `len` floats;
/// `len` must equal `n*c*h*w`. The data is copied.
#[no_mangle]
pub unsafe extern "C" fn emcad_tensor_new(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut EmcadTensor,
) -> c_int {
    if data.is_null() || out.is_null() {
        return arg_error("emcad_tensor_new: null pointer");
    }
    let slice = std::slice::from_raw_parts(data, len);
    match Tensor4D::new(n, c, h, w, slice.to_vec()) {
        Ok(t) => {
            *out = Box::into_raw(Box::new(EmcadTensor { inner: t }));
            EMCAD_OK
        }
        Err(e) => fail(e),
    }
}

/// Writes the tensor's (n, c, h, w) into `dims` (4 elements).
#[no_mangle]
pub unsafe extern "C" fn emcad_tensor_shape(t: *const EmcadTensor, dims: *mut usize) -> c_int {
    if t.is_null() || dims.is_null() {
        return arg_error("emcad_tensor_shape: null pointer");
    }
    let (n, c, h, w) = (*t).inner.shape();
    let d = std::slice::from_raw_parts_mut(dims, 4);
    d.copy_from_slice(&[n, c, h, w]);
    EMCAD_OK
}

/// Exposes the tensor's backing buffer. The pointer is valid until the
/// tensor is freed.
#[no_mangle]
pub unsafe extern "C" fn emcad_tensor_data(
    t: *const EmcadTensor,
    data: *mut *const f32,
    len: *mut usize,
) -> c_int {
    if t.is_null() || data.is_null() || len.is_null() {
        return arg_error("emcad_tensor_data: null pointer");
    }
    let d = (*t).inner.data();
    *data = d.as_ptr();
    *len = d.len();
    EMCAD_OK
}

#[no_mangle]
pub unsafe extern "C" fn emcad_tensor_free(t: *mut EmcadTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

fn make_decoder(cfg: &DecoderConfig, seed: u64, out: *mut *mut EmcadDecoder) -> c_int {
    match build_decoder(cfg, seed) {
        Ok(d) => {
            unsafe { *out = Box::into_raw(Box::new(EmcadDecoder { inner: d })) };
            EMCAD_OK
        }
        Err(e) => fail(e),
    }
}

/// Builds the standard-width decoder (64/128/320/512 channels, 9 classes)
/// with deterministic seed-derived initialization.
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_standard(seed: u64, out: *mut *mut EmcadDecoder) -> c_int {
    if out.is_null() {
        return arg_error("emcad_decoder_standard: null pointer");
    }
    make_decoder(&DecoderConfig::standard(), seed, out)
}

/// Builds the tiny-width decoder (32/64/160/256 channels).
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_tiny(seed: u64, out: *mut *mut EmcadDecoder) -> c_int {
    if out.is_null() {
        return arg_error("emcad_decoder_tiny: null pointer");
    }
    make_decoder(&DecoderConfig::tiny(), seed, out)
}

/// Builds a decoder from a NUL-terminated TOML config string (the same
/// format as the CLI config file); the config's own `seed` is used.
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_from_toml(
    config: *const c_char,
    out: *mut *mut EmcadDecoder,
) -> c_int {
    if config.is_null() || out.is_null() {
        return arg_error("emcad_decoder_from_toml: null pointer");
    }
    let text = match CStr::from_ptr(config).to_str() {
        Ok(t) => t,
        Err(_) => return arg_error("emcad_decoder_from_toml: config is not valid UTF-8"),
    };
    match emcad_core::io::parse_config(text) {
        Ok(cfg) => make_decoder(&cfg.decoder_config(), cfg.seed, out),
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_free(d: *mut EmcadDecoder) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Total learnable parameter count of the decoder.
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_param_count(
    d: *const EmcadDecoder,
    out: *mut u64,
) -> c_int {
    if d.is_null() || out.is_null() {
        return arg_error("emcad_decoder_param_count: null pointer");
    }
    *out = count_params(&(*d).inner).root.params;
    EMCAD_OK
}

/// Total forward FLOPs per batch element at the given input resolution.
/// `full` nonzero additionally counts elementwise ops at 1 FLOP each.
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_flops(
    d: *const EmcadDecoder,
    input_h: usize,
    input_w: usize,
    full: c_int,
    out: *mut u64,
) -> c_int {
    if d.is_null() || out.is_null() {
        return arg_error("emcad_decoder_flops: null pointer");
    }
    if input_h % 32 != 0 || input_w % 32 != 0 {
        return arg_error("emcad_decoder_flops: input dims must be divisible by 32");
    }
    let mode = if full != 0 { FlopMode::Full } else { FlopMode::ConvOnly };
    *out = count_flops(&(*d).inner, input_h, input_w, mode).root.flops;
    EMCAD_OK
}

/// Runs the forward pass over the four pyramid features (x1 at 1/4
/// scale .. x4 at 1/32 scale) and writes the four prediction-map handles
/// into `maps_out` (deepest first: p1 .. p4). The caller owns and must
/// free all four on success; on failure nothing is written.
#[no_mangle]
pub unsafe extern "C" fn emcad_decoder_forward(
    d: *const EmcadDecoder,
    x1: *const EmcadTensor,
    x2: *const EmcadTensor,
    x3: *const EmcadTensor,
    x4: *const EmcadTensor,
    maps_out: *mut *mut EmcadTensor,
) -> c_int {
    if d.is_null()
        || x1.is_null()
        || x2.is_null()
        || x3.is_null()
        || x4.is_null()
        || maps_out.is_null()
    {
        return arg_error("emcad_decoder_forward: null pointer");
    }
    let feats = PyramidFeatures {
        x1: (*x1).inner.clone(),
        x2: (*x2).inner.clone(),
        x3: (*x3).inner.clone(),
        x4: (*x4).inner.clone(),
    };
    match decoder_forward(&(*d).inner, &feats) {
        Ok(maps) => {
            let out = std::slice::from_raw_parts_mut(maps_out, 4);
            for (slot, t) in out.iter_mut().zip([maps.p1, maps.p2, maps.p3, maps.p4]) {
                *slot = Box::into_raw(Box::new(EmcadTensor { inner: t }));
            }
            EMCAD_OK
        }
        Err(e) => fail(e),
    }
}

//! C ABI over `rsmooth`.
//!
//! Every fallible function returns an [`RsmStatus`]; on failure the message
//! is available from [`rsm_last_error`] on the same thread. Networks are
//! opaque handles created by `rsm_network_create` or `rsm_network_load` and
//! released with `rsm_network_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsmooth::annealing::{AnnealSchedule, ScheduleKind};
use rsmooth::nn::{Activation, Network};
use rsmooth::smoothing::{smooth_sample, SmoothingConfig, SmoothingMode};
use rsmooth::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsmStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Config = 3,
    Input = 4,
    Format = 5,
    Io = 6,
    NonFinite = 7,
    InvalidArgument = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsmSmoothingMode {
    Off = 0,
    Global = 1,
    Local = 2,
    GlobalLocal = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsmSchedule {
    Laplace = 0,
    Logistic = 1,
    Constant = 2,
    Off = 3,
}

fn smoothing_mode(code: i32) -> Result<SmoothingMode, RsmStatus> {
    Ok(match code {
        c if c == RsmSmoothingMode::Off as i32 => SmoothingMode::Off,
        c if c == RsmSmoothingMode::Global as i32 => SmoothingMode::Global,
        c if c == RsmSmoothingMode::Local as i32 => SmoothingMode::Local,
        c if c == RsmSmoothingMode::GlobalLocal as i32 => SmoothingMode::GlobalLocal,
        _ => {
            return Err(fail(
                RsmStatus::InvalidArgument,
                format!("unknown smoothing mode {code}"),
            ))
        }
    })
}

fn schedule_kind(code: i32) -> Result<ScheduleKind, RsmStatus> {
    Ok(match code {
        c if c == RsmSchedule::Laplace as i32 => ScheduleKind::Laplace,
        c if c == RsmSchedule::Logistic as i32 => ScheduleKind::Logistic,
        c if c == RsmSchedule::Constant as i32 => ScheduleKind::Constant,
        c if c == RsmSchedule::Off as i32 => ScheduleKind::Off,
        _ => {
            return Err(fail(
                RsmStatus::InvalidArgument,
                format!("unknown schedule kind {code}"),
            ))
        }
    })
}

/// Opaque network handle.
pub struct RsmNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RsmStatus, message: impl Into<String>) -> RsmStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> RsmStatus {
    let status = match e {
        Error::Shape(_) => RsmStatus::Shape,
        Error::Config(_) => RsmStatus::Config,
        Error::Input(_) => RsmStatus::Input,
        Error::Format { .. } => RsmStatus::Format,
        Error::Io { .. } => RsmStatus::Io,
        Error::NonFinite { .. } => RsmStatus::NonFinite,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into `RsmStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), RsmStatus>) -> RsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsmStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(RsmStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], RsmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(RsmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], RsmStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(RsmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn network<'a>(net: *const RsmNetwork) -> Result<&'a Network, RsmStatus> {
    net.as_ref()
        .map(|n| &n.inner)
        .ok_or_else(|| fail(RsmStatus::NullPointer, "network handle is null"))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, RsmStatus> {
    if p.is_null() {
        return Err(fail(RsmStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(RsmStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Result<(), RsmStatus> {
    if out.is_null() {
        return Err(fail(RsmStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if nothing failed yet.
#[no_mangle]
pub extern "C" fn rsm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dense network with `layer_count` layers. `widths[i]` is the
/// output width of layer `i` and `activations[i]` its activation code
/// (0 identity, 1 relu, 2 softmax). Weights use He initialization from
/// `seed`; biases start at zero.
///
/// # Safety
/// `widths` and `activations` must point to `layer_count` elements and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_create(
    input_dim: usize,
    widths: *const usize,
    activations: *const u8,
    layer_count: usize,
    seed: u64,
    out: *mut *mut RsmNetwork,
) -> RsmStatus {
    guard(|| {
        let widths = slice(widths, layer_count, "widths")?;
        let codes = slice(activations, layer_count, "activations")?;
        let mut layers = Vec::with_capacity(layer_count);
        for (&w, &code) in widths.iter().zip(codes) {
            let act = Activation::from_code(code)
                .ok_or_else(|| fail(RsmStatus::InvalidArgument, format!("unknown activation code {code}")))?;
            layers.push((w, act));
        }
        let mut net = Network::new(input_dim, &layers).map_err(from_error)?;
        net.he_init(&mut ChaCha8Rng::seed_from_u64(seed));
        store(out, Box::into_raw(Box::new(RsmNetwork { inner: net })), "out")
    })
}

/// Loads a checkpoint written by `rsm_network_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_load(path: *const c_char, out: *mut *mut RsmNetwork) -> RsmStatus {
    guard(|| {
        let net = Network::load(c_path(path)?).map_err(from_error)?;
        store(out, Box::into_raw(Box::new(RsmNetwork { inner: net })), "out")
    })
}

/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_save(net: *const RsmNetwork, path: *const c_char) -> RsmStatus {
    guard(|| network(net)?.save(c_path(path)?).map_err(from_error))
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_free(net: *mut RsmNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_input_dim(net: *const RsmNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// Output width, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_output_dim(net: *const RsmNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.output_dim())
}

/// Forward pass over a row-major `[batch, input_dim]` buffer into a
/// `[batch, output_dim]` buffer of `out_len` elements.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn rsm_network_forward(
    net: *const RsmNetwork,
    inputs: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> RsmStatus {
    guard(|| {
        let net = network(net)?;
        let inputs = slice(inputs, batch * net.input_dim(), "inputs")?;
        if out_len != batch * net.output_dim() {
            return Err(fail(
                RsmStatus::Shape,
                format!(
                    "output buffer holds {out_len} values, need {}",
                    batch * net.output_dim()
                ),
            ));
        }
        let out = slice_mut(out, out_len, "out")?;
        let cache = net.forward_batch(inputs, batch).map_err(from_error)?;
        out.copy_from_slice(cache.output());
        Ok(())
    })
}

/// Smoothed loss `‖Wⁿ d‖²` of one sample and its gradient with respect to
/// the prediction, where `d = |prediction − target|` and `W` is built from
/// the diffusivity at scale `s_t`. `mode` is an `RsmSmoothingMode` value.
/// `grad` and `mean_kappa` may be null.
///
/// # Safety
/// `prediction`, `target` and (if non-null) `grad` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn rsm_smoothed_loss(
    prediction: *const f64,
    target: *const f64,
    len: usize,
    mode: i32,
    s_t: f64,
    alpha: f64,
    n_steps: usize,
    loss: *mut f64,
    grad: *mut f64,
    mean_kappa: *mut f64,
) -> RsmStatus {
    guard(|| {
        if len == 0 {
            return Err(fail(RsmStatus::Shape, "empty prediction"));
        }
        let p = slice(prediction, len, "prediction")?;
        let y = slice(target, len, "target")?;
        if p.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(fail(RsmStatus::Input, "non-finite prediction or target"));
        }
        if !(0.0..=1.0).contains(&s_t) {
            return Err(fail(RsmStatus::Config, format!("s_t must lie in [0, 1], got {s_t}")));
        }
        let config = SmoothingConfig {
            mode: smoothing_mode(mode)?,
            alpha,
            n_steps,
            ..SmoothingConfig::default()
        };
        config.validate().map_err(from_error)?;
        let sample = smooth_sample(p, y, s_t, &config);
        store(loss, sample.loss, "loss")?;
        if !grad.is_null() {
            slice_mut(grad, len, "grad")?.copy_from_slice(&sample.grad);
        }
        if !mean_kappa.is_null() {
            mean_kappa.write(sample.mean_kappa);
        }
        Ok(())
    })
}

/// Annealed sigmoid scale at `progress ∈ [0, 1]` for an `RsmSchedule` kind.
/// `const_s` is only read by the constant schedule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsm_schedule_scale(
    kind: i32,
    mu: f64,
    b: f64,
    const_s: f64,
    progress: f64,
    out: *mut f64,
) -> RsmStatus {
    guard(|| {
        let schedule = AnnealSchedule {
            kind: schedule_kind(kind)?,
            mu,
            b,
            const_s,
        };
        let s = schedule.scale_at(progress).map_err(from_error)?;
        store(out, s, "out")
    })
}

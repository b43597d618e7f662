//! C interface to `l3unet`.
//!
//! Objects are opaque handles created by `*_new`/`*_read`/`*_from_json`
//! functions and released with the matching `*_free`. Fallible functions
//! return an [`L3uStatus`]; on failure a description is available from
//! [`l3u_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use l3unet::accel::{graph_cost_report, AcceleratorSpec};
use l3unet::arch::{build_l3unet, randomize_weights, ArchConfig};
use l3unet::eval::{ClassMap, ConfusionMatrix};
use l3unet::nn::{param_count, run_graph, ExecMode, ModelGraph, QuantSpec, WeightFile};
use l3unet::{Data, Dtype, Error, FoldSpec, Shape, Tensor};

pub const L3U_DTYPE_F32: u8 = 0;
pub const L3U_DTYPE_I8: u8 = 1;
pub const L3U_DTYPE_I32: u8 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L3uStatus {
    Ok = 0,
    NullPointer = 1,
    Divisibility = 2,
    Binding = 3,
    Shape = 4,
    Format = 5,
    Io = 6,
    Config = 7,
    InvalidArgument = 8,
    Panic = 9,
}

pub struct L3uTensor {
    inner: Tensor,
}

pub struct L3uModel {
    graph: ModelGraph,
}

pub struct L3uConfusion {
    inner: ConfusionMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> L3uStatus {
    match err {
        e if e.is_divisibility() => L3uStatus::Divisibility,
        Error::WeightBinding(_) | Error::Graph(_) => L3uStatus::Binding,
        Error::InvalidShape(_)
        | Error::ChannelMismatch { .. }
        | Error::SpatialMismatch { .. }
        | Error::NonIntegralOutput { .. }
        | Error::NonPositiveOutput { .. }
        | Error::ImageTooSmall { .. }
        | Error::Layer { .. } => L3uStatus::Shape,
        Error::Format(_) => L3uStatus::Format,
        Error::Io(_) => L3uStatus::Io,
        Error::Config(_) => L3uStatus::Config,
        _ => L3uStatus::InvalidArgument,
    }
}

struct Fail(L3uStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(L3uStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, recording any error or panic for [`l3u_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> L3uStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => L3uStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            L3uStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(L3uStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL.
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn l3u_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from a function in this library that returns an owned
/// string, and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn l3u_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `channels * height * width` elements of type `dtype` into a new
/// tensor.
///
/// # Safety
/// `data` must point to that many readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_new(
    dtype: u8,
    channels: usize,
    height: usize,
    width: usize,
    data: *const c_void,
    out: *mut *mut L3uTensor,
) -> L3uStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let shape = Shape::new(channels, height, width);
        let n = shape.len();
        let data = match Dtype::from_byte(dtype)? {
            Dtype::F32 => Data::F32(std::slice::from_raw_parts(data as *const f32, n).to_vec()),
            Dtype::I8 => Data::I8(std::slice::from_raw_parts(data as *const i8, n).to_vec()),
            Dtype::I32 => Data::I32(std::slice::from_raw_parts(data as *const i32, n).to_vec()),
        };
        out_arg(out, L3uTensor { inner: Tensor::new(shape, data)? })
    })
}

/// Reads an L3UT file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_read(path: *const c_char, out: *mut *mut L3uTensor) -> L3uStatus {
    guard(|| {
        let bytes = std::fs::read(str_arg(path, "path")?).map_err(Error::from)?;
        out_arg(out, L3uTensor { inner: Tensor::from_bytes(&bytes)? })
    })
}

/// # Safety
/// `t` must be a live tensor handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_write(t: *const L3uTensor, path: *const c_char) -> L3uStatus {
    guard(|| {
        let t = ref_arg(t, "tensor")?;
        std::fs::write(str_arg(path, "path")?, t.inner.to_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tensor handle; each non-NULL output must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_shape(
    t: *const L3uTensor,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> L3uStatus {
    guard(|| {
        let s = ref_arg(t, "tensor")?.inner.shape();
        for (p, v) in [(channels, s.channels), (height, s.height), (width, s.width)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// One of the `L3U_DTYPE_*` values, or 255 for a NULL handle.
///
/// # Safety
/// `t` must be NULL or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_dtype(t: *const L3uTensor) -> u8 {
    t.as_ref().map_or(255, |t| t.inner.dtype() as u8)
}

/// Borrowed pointer to the CHW element buffer, valid while `t` lives.
///
/// # Safety
/// `t` must be NULL or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_data(t: *const L3uTensor) -> *const c_void {
    match t.as_ref().map(|t| t.inner.data()) {
        Some(Data::F32(v)) => v.as_ptr() as *const c_void,
        Some(Data::I8(v)) => v.as_ptr() as *const c_void,
        Some(Data::I32(v)) => v.as_ptr() as *const c_void,
        None => std::ptr::null(),
    }
}

/// # Safety
/// `t` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l3u_tensor_free(t: *mut L3uTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live tensor handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_fold(t: *const L3uTensor, alpha: usize, out: *mut *mut L3uTensor) -> L3uStatus {
    guard(|| {
        let y = l3unet::fold(&ref_arg(t, "tensor")?.inner, FoldSpec::new(alpha)?)?;
        out_arg(out, L3uTensor { inner: y })
    })
}

/// # Safety
/// `t` must be a live tensor handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_unfold(t: *const L3uTensor, alpha: usize, out: *mut *mut L3uTensor) -> L3uStatus {
    guard(|| {
        let y = l3unet::unfold(&ref_arg(t, "tensor")?.inner, FoldSpec::new(alpha)?)?;
        out_arg(out, L3uTensor { inner: y })
    })
}

/// Builds the model described by a JSON config with all weights zero.
/// An empty object gives the default model.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_from_json(json: *const c_char, out: *mut *mut L3uModel) -> L3uStatus {
    guard(|| {
        let cfg = ArchConfig::from_json(str_arg(json, "json")?)?;
        out_arg(out, L3uModel { graph: build_l3unet(&cfg)? })
    })
}

/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_randomize(m: *mut L3uModel, seed: u64) -> L3uStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("model"))?;
        randomize_weights(&mut m.graph, seed)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_free(m: *mut L3uModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Binds an L3UW weight file; every conv layer must be covered exactly.
///
/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_load_weights(m: *mut L3uModel, path: *const c_char) -> L3uStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("model"))?;
        WeightFile::load(Path::new(str_arg(path, "path")?))?.bind(&mut m.graph)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_save_weights(m: *const L3uModel, path: *const c_char) -> L3uStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        WeightFile::from_graph(&m.graph).save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Stored weight plus bias elements, or 0 for a NULL handle.
///
/// # Safety
/// `m` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_param_count(m: *const L3uModel) -> u64 {
    m.as_ref().map_or(0, |m| param_count(&m.graph) as u64)
}

/// Runs the model. Float mode takes an F32 input; quantized mode takes I8
/// and converts the weights to Q7 first.
///
/// # Safety
/// `m` and `input` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_run(
    m: *const L3uModel,
    input: *const L3uTensor,
    quantized: bool,
    out: *mut *mut L3uTensor,
) -> L3uStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let x = &ref_arg(input, "input")?.inner;
        let q = QuantSpec::default();
        let y = if quantized {
            run_graph(&m.graph.quantized(&q), x, ExecMode::Quantized)?
        } else {
            run_graph(&m.graph.dequantized(&q), x, ExecMode::Float)?
        };
        out_arg(out, L3uTensor { inner: y })
    })
}

/// Per-layer cost CSV for `processors` channel-parallel processors.
/// Free the result with [`l3u_string_free`].
///
/// # Safety
/// `m` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_model_cost_csv(m: *const L3uModel, processors: usize, out: *mut *mut c_char) -> L3uStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let report = graph_cost_report(&m.graph, &AcceleratorSpec::with_processors(processors)?)?;
        *out = CString::new(report.to_csv()).expect("CSV has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_confusion_new(num_classes: usize, out: *mut *mut L3uConfusion) -> L3uStatus {
    guard(|| {
        if num_classes == 0 {
            return Err(Fail(L3uStatus::InvalidArgument, "num_classes must be positive".into()));
        }
        out_arg(out, L3uConfusion { inner: ConfusionMatrix::new(num_classes) })
    })
}

/// Adds one pair of `height * width` row-major label maps.
///
/// # Safety
/// `cm` must be a live handle; `gt` and `pred` must each point to
/// `height * width` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn l3u_confusion_accumulate(
    cm: *mut L3uConfusion,
    gt: *const u8,
    pred: *const u8,
    height: usize,
    width: usize,
) -> L3uStatus {
    guard(|| {
        let cm = cm.as_mut().ok_or_else(|| null("confusion matrix"))?;
        if gt.is_null() || pred.is_null() {
            return Err(null("label map"));
        }
        let n = height * width;
        let gt = ClassMap::new(height, width, std::slice::from_raw_parts(gt, n).to_vec())?;
        let pred = ClassMap::new(height, width, std::slice::from_raw_parts(pred, n).to_vec())?;
        cm.inner.accumulate(&gt, &pred)?;
        Ok(())
    })
}

/// # Safety
/// `cm` must be a live handle; each non-NULL output must be writable.
#[no_mangle]
pub unsafe extern "C" fn l3u_confusion_metrics(
    cm: *const L3uConfusion,
    pixel_accuracy: *mut f64,
    mean_iou: *mut f64,
) -> L3uStatus {
    guard(|| {
        let cm = &ref_arg(cm, "confusion matrix")?.inner;
        let (acc, miou) = (cm.pixel_accuracy()?, cm.mean_iou()?);
        if !pixel_accuracy.is_null() {
            *pixel_accuracy = acc;
        }
        if !mean_iou.is_null() {
            *mean_iou = miou;
        }
        Ok(())
    })
}

/// # Safety
/// `cm` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l3u_confusion_free(cm: *mut L3uConfusion) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

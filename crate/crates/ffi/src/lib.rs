//! C interface to the enet engine.
//!
//! Every function returns an [`EnetStatus`]; on failure a description is
//! available from [`enet_last_error`] on the same thread. Models are opaque
//! [`EnetModel`] handles created by `enet_model_build` / `enet_model_load`
//! and released with `enet_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use enet::analyzer::{class_weight, count_flops, count_params, FlopConvention};
use enet::enwt::{load_weights, save_weights};
use enet::passes::{fuse, validate};
use enet::runtime::{argmax_labels, plan_buffers, ExecutionPlan, Executor};
use enet::{build_enet, init_weights, DType, Error, Graph, Tensor, WeightStore};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnetStatus {
    Ok = 0,
    /// A pointer was null, a string was not UTF-8, or a buffer had the wrong length.
    InvalidArgument = 1,
    /// Incompatible shapes or an unsupported input size.
    Shape = 2,
    /// A weight or image file is malformed.
    Format = 3,
    Io = 4,
    /// A numeric argument is outside its domain.
    Domain = 5,
    /// The graph or its weights are inconsistent.
    Invalid = 6,
    /// An unexpected internal failure (including a caught panic).
    Internal = 7,
}

/// A network with its weights, fixed input size and reusable scratch buffers.
pub struct EnetModel {
    graph: Graph,
    weights: WeightStore,
    plan: ExecutionPlan,
    exec: Executor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EnetStatus {
    match e {
        Error::InvalidShape(_) | Error::Shape(_) => EnetStatus::Shape,
        Error::Format { .. } | Error::Parse { .. } | Error::Palette { .. } => EnetStatus::Format,
        Error::Io { .. } => EnetStatus::Io,
        Error::Domain(_) => EnetStatus::Domain,
        Error::Build(_) | Error::Validation { .. } | Error::Fold { .. } | Error::CorruptIndices(_) => {
            EnetStatus::Invalid
        }
        Error::Execution { .. } => EnetStatus::Internal,
    }
}

struct Fail(EnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(EnetStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EnetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EnetStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))
}

unsafe fn model_ref<'a>(m: *const EnetModel) -> Result<&'a EnetModel, Fail> {
    m.as_ref().ok_or_else(|| invalid("model is null"))
}

unsafe fn model_mut<'a>(m: *mut EnetModel) -> Result<&'a mut EnetModel, Fail> {
    m.as_mut().ok_or_else(|| invalid("model is null"))
}

fn check_dims(height: usize, width: usize) -> Result<(), Fail> {
    if height == 0 || width == 0 || !height.is_multiple_of(8) || !width.is_multiple_of(8) {
        return Err(Fail(
            EnetStatus::Shape,
            format!("input {height}×{width} is not divisible by 8"),
        ));
    }
    Ok(())
}

fn make_model(graph: Graph, weights: WeightStore) -> Result<EnetModel, Fail> {
    if let Some(d) = validate(&graph, &weights).into_iter().next() {
        return Err(Fail(EnetStatus::Invalid, d.message));
    }
    let plan = plan_buffers(&graph, graph.input_shape())?;
    Ok(EnetModel {
        graph,
        weights,
        plan,
        exec: Executor::new(),
    })
}

unsafe fn emit(out: *mut *mut EnetModel, model: EnetModel) {
    *out = Box::into_raw(Box::new(model));
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn enet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an ENet for `num_classes` classes and a `3 × height × width` input,
/// with weights drawn deterministically from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn enet_model_build(
    num_classes: usize,
    height: usize,
    width: usize,
    seed: u64,
    out: *mut *mut EnetModel,
) -> EnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        check_dims(height, width)?;
        let g = build_enet(num_classes, height, width)?;
        let w = init_weights(&g, seed)?;
        emit(out, make_model(g, w)?);
        Ok(())
    })
}

/// Loads ENWT weights for a `num_classes`-class ENet at the given input size.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_model_load(
    path: *const c_char,
    num_classes: usize,
    height: usize,
    width: usize,
    out: *mut *mut EnetModel,
) -> EnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = path_arg(path)?;
        check_dims(height, width)?;
        let g = build_enet(num_classes, height, width)?;
        let w = load_weights(path)?;
        emit(out, make_model(g, w)?);
        Ok(())
    })
}

/// Writes the model's weights as ENWT, in half precision if `fp16` is non-zero.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn enet_model_save(model: *const EnetModel, path: *const c_char, fp16: i32) -> EnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path)?;
        let dtype = if fp16 != 0 { DType::F16 } else { DType::F32 };
        save_weights(&m.weights, dtype, path)?;
        Ok(())
    })
}

/// Folds batch norms into convolutions and removes dropout in place.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn enet_model_fuse(model: *mut EnetModel) -> EnetStatus {
    guard(|| {
        let m = model_mut(model)?;
        let (g, w, _) = fuse(&m.graph, &m.weights)?;
        *m = make_model(g, w)?;
        Ok(())
    })
}

/// Number of graph nodes, including input and output.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_model_node_count(model: *const EnetModel, out: *mut usize) -> EnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        *out = m.graph.len();
        Ok(())
    })
}

/// Input height, width and the number of output classes.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_model_dims(
    model: *const EnetModel,
    height: *mut usize,
    width: *mut usize,
    num_classes: *mut usize,
) -> EnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        if height.is_null() || width.is_null() || num_classes.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let s = m.graph.input_shape();
        *height = s.height;
        *width = s.width;
        *num_classes = m.graph.num_classes();
        Ok(())
    })
}

/// Learnable parameter count.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_model_param_count(model: *const EnetModel, out: *mut u64) -> EnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        *out = count_params(&m.graph)?;
        Ok(())
    })
}

/// Floating-point operations for one inference at the model's input size,
/// counting a multiply-accumulate as two operations if `fma2` is non-zero.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_model_flops(model: *const EnetModel, fma2: i32, out: *mut u64) -> EnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        let conv = if fma2 != 0 { FlopConvention::Fma2 } else { FlopConvention::Mac };
        *out = count_flops(&m.graph, m.graph.input_shape(), conv)?.total_flops;
        Ok(())
    })
}

unsafe fn forward(m: &mut EnetModel, input: *const f32, input_len: usize) -> Result<Tensor, Fail> {
    let shape = m.graph.input_shape();
    if input.is_null() || input_len != shape.numel() {
        return Err(invalid(&format!("input must hold {} floats ({shape})", shape.numel())));
    }
    let x = Tensor::from_vec(shape, std::slice::from_raw_parts(input, input_len).to_vec())?;
    Ok(m.exec.run(&m.graph, &m.weights, &x, Some(&m.plan))?)
}

/// Runs the network on a `3 × H × W` row-major input and writes
/// `num_classes × H × W` logits.
///
/// # Safety
/// `input` must point to `input_len` floats and `logits` to `logits_len`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn enet_model_infer(
    model: *mut EnetModel,
    input: *const f32,
    input_len: usize,
    logits: *mut f32,
    logits_len: usize,
) -> EnetStatus {
    guard(|| {
        let m = model_mut(model)?;
        let y = forward(m, input, input_len)?;
        if logits.is_null() || logits_len != y.data().len() {
            return Err(invalid(&format!("logits must hold {} floats", y.data().len())));
        }
        ptr::copy_nonoverlapping(y.data().as_ptr(), logits, logits_len);
        Ok(())
    })
}

/// Like [`enet_model_infer`] but writes the per-pixel argmax class
/// (`H × W` values).
///
/// # Safety
/// `input` must point to `input_len` floats and `labels` to `labels_len`
/// writable values.
#[no_mangle]
pub unsafe extern "C" fn enet_model_segment(
    model: *mut EnetModel,
    input: *const f32,
    input_len: usize,
    labels: *mut u32,
    labels_len: usize,
) -> EnetStatus {
    guard(|| {
        let m = model_mut(model)?;
        let lm = argmax_labels(&forward(m, input, input_len)?);
        if labels.is_null() || labels_len != lm.labels.len() {
            return Err(invalid(&format!("labels must hold {} values", lm.labels.len())));
        }
        ptr::copy_nonoverlapping(lm.labels.as_ptr(), labels, labels_len);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn enet_model_free(model: *mut EnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Class weight `1 / ln(c + p)` for class probability `p`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn enet_class_weight(p: f64, c: f64, out: *mut f64) -> EnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        *out = class_weight(p, c)?;
        Ok(())
    })
}

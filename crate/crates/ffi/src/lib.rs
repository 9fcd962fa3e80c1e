//! C ABI over `laclip-core`.
//!
//! Every fallible function returns a [`LaclipStatus`]; on failure the message
//! is available from [`laclip_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned to
//! the caller are released with [`laclip_string_free`]. Matrices are dense
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use laclip_core::contrastive::{
    clip_loss_and_grads, multitext_loss_and_grads, EmbeddingBatch, ImageSideScaling, LossError, LossOutput,
    TemperatureParam,
};
use laclip_core::encoder::{encode_image, encode_text, Checkpoint, Tokenizer};
use laclip_core::icl::{build_prompt, postprocess_completion, IclError, MetaRegistry, Strategy};
use laclip_core::util::rng_from_seed;
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaclipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotUnitNorm = 4,
    Io = 5,
    Parse = 6,
    EmptyResult = 7,
    BufferTooSmall = 8,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaclipScaling {
    Mean = 0,
    Printed = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LaclipStatus, String);

impl Failure {
    fn new(status: LaclipStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

impl From<LossError> for Failure {
    fn from(e: LossError) -> Self {
        let status = match e {
            LossError::NotUnitNorm { .. } | LossError::ZeroNorm(_) => LaclipStatus::NotUnitNorm,
            LossError::ShapeMismatch(_) => LaclipStatus::ShapeMismatch,
            _ => LaclipStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<IclError> for Failure {
    fn from(e: IclError) -> Self {
        let status = match e {
            IclError::EmptyRewrite => LaclipStatus::EmptyResult,
            _ => LaclipStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording the message of an error or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LaclipStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LaclipStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LaclipStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(LaclipStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(LaclipStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn matrix<'a>(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<ArrayView2<'a, f64>, Failure> {
    non_null(p, name)?;
    if rows == 0 || cols == 0 {
        return Err(Failure::new(LaclipStatus::InvalidArgument, format!("{name} is empty")));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::new(LaclipStatus::InvalidArgument, "size overflow"))?;
    let data = std::slice::from_raw_parts(p, len);
    Ok(ArrayView2::from_shape((rows, cols), data).expect("length matches shape"))
}

unsafe fn copy_out(src: &Array2<f64>, dst: *mut f64, len: usize) -> Result<(), Failure> {
    non_null(dst, "output buffer")?;
    if len < src.len() {
        return Err(Failure::new(
            LaclipStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    let out = std::slice::from_raw_parts_mut(dst, src.len());
    for (o, v) in out.iter_mut().zip(src.iter()) {
        *o = *v;
    }
    Ok(())
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(LaclipStatus::Internal, "string contains a nul byte"))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn laclip_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn laclip_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn laclip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loss values and gradients from one evaluation.
pub struct LaclipLoss(LossOutput);

/// Symmetric InfoNCE over `n` unit-norm rows of width `d`. `s` is the log
/// inverse temperature.
///
/// # Safety
/// `image` and `text` must point to `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn laclip_clip_loss(
    image: *const f64,
    text: *const f64,
    n: usize,
    d: usize,
    s: f64,
    out: *mut *mut LaclipLoss,
) -> LaclipStatus {
    guard(|| {
        non_null(out, "out")?;
        let img = EmbeddingBatch::new(matrix(image, n, d, "image")?.to_owned())?;
        let txt = EmbeddingBatch::new(matrix(text, n, d, "text")?.to_owned())?;
        let temp = TemperatureParam {
            s,
            ..TemperatureParam::default()
        };
        let loss = clip_loss_and_grads(&img, &txt, &temp)?;
        *out = Box::into_raw(Box::new(LaclipLoss(loss)));
        Ok(())
    })
}

/// Multi-text loss. `texts` holds `n_slots` blocks of `n * d` doubles, slot
/// 0 being the original captions.
///
/// # Safety
/// `image` must point to `n * d` doubles and `texts` to `n_slots * n * d`.
#[no_mangle]
pub unsafe extern "C" fn laclip_multitext_loss(
    image: *const f64,
    texts: *const f64,
    n_slots: usize,
    n: usize,
    d: usize,
    s: f64,
    scaling: LaclipScaling,
    out: *mut *mut LaclipLoss,
) -> LaclipStatus {
    guard(|| {
        non_null(out, "out")?;
        let img = EmbeddingBatch::new(matrix(image, n, d, "image")?.to_owned())?;
        let all = matrix(texts, n_slots * n, d, "texts")?;
        let slots = (0..n_slots)
            .map(|j| EmbeddingBatch::new(all.slice(ndarray::s![j * n..(j + 1) * n, ..]).to_owned()))
            .collect::<Result<Vec<_>, _>>()?;
        let temp = TemperatureParam {
            s,
            ..TemperatureParam::default()
        };
        let scaling = match scaling {
            LaclipScaling::Mean => ImageSideScaling::Mean,
            LaclipScaling::Printed => ImageSideScaling::Printed,
        };
        let loss = multitext_loss_and_grads(&img, &slots, &temp, scaling)?;
        *out = Box::into_raw(Box::new(LaclipLoss(loss)));
        Ok(())
    })
}

/// Writes the scalar results; any output pointer may be NULL.
///
/// # Safety
/// `loss` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn laclip_loss_values(
    loss: *const LaclipLoss,
    l_image: *mut f64,
    l_text: *mut f64,
    total: *mut f64,
    grad_s: *mut f64,
) -> LaclipStatus {
    guard(|| {
        non_null(loss, "loss")?;
        let l = &(*loss).0;
        for (p, v) in [(l_image, l.l_image), (l_text, l.l_text), (total, l.total), (grad_s, l.grad_s)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the image gradient (`n * d` values).
///
/// # Safety
/// `loss` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn laclip_loss_grad_image(loss: *const LaclipLoss, buf: *mut f64, len: usize) -> LaclipStatus {
    guard(|| {
        non_null(loss, "loss")?;
        copy_out(&(*loss).0.grad_image, buf, len)
    })
}

/// Copies the text gradient (`n_slots * n * d` values, slot-major).
///
/// # Safety
/// `loss` must be a live handle and `buf` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn laclip_loss_grad_text(loss: *const LaclipLoss, buf: *mut f64, len: usize) -> LaclipStatus {
    guard(|| {
        non_null(loss, "loss")?;
        copy_out(&(*loss).0.grad_text, buf, len)
    })
}

/// # Safety
/// `loss` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn laclip_loss_free(loss: *mut LaclipLoss) {
    if !loss.is_null() {
        drop(Box::from_raw(loss));
    }
}

/// Holds the bundled example pairs.
pub struct LaclipPromptBuilder(MetaRegistry);

#[no_mangle]
pub extern "C" fn laclip_prompt_builder_new() -> *mut LaclipPromptBuilder {
    Box::into_raw(Box::new(LaclipPromptBuilder(MetaRegistry::bundled())))
}

/// Renders the five-line rewrite prompt for `query`. `strategy` is one of
/// chatgpt, bard, mscoco, human. The result is freed with `laclip_string_free`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn laclip_build_prompt(
    builder: *const LaclipPromptBuilder,
    strategy: *const c_char,
    query: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> LaclipStatus {
    guard(|| {
        non_null(builder, "builder")?;
        non_null(out, "out")?;
        let strategy: Strategy = c_str(strategy, "strategy")?.parse()?;
        let query = c_str(query, "query")?;
        let (_, text) = build_prompt(&(*builder).0, strategy, query, &mut rng_from_seed(seed))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `builder` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn laclip_prompt_builder_free(builder: *mut LaclipPromptBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// First line of a completion, trimmed, without stray `=>` markers.
/// Returns `EmptyResult` when nothing is left.
///
/// # Safety
/// `raw` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn laclip_postprocess_completion(raw: *const c_char, out: *mut *mut c_char) -> LaclipStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = postprocess_completion(c_str(raw, "raw")?)?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// Token ids of `text`, written to `ids` (`context_len` values).
///
/// # Safety
/// `text` must be NUL-terminated and `ids` hold `context_len` values.
#[no_mangle]
pub unsafe extern "C" fn laclip_tokenize(
    text: *const c_char,
    vocab_size: usize,
    context_len: usize,
    ids: *mut u32,
) -> LaclipStatus {
    guard(|| {
        non_null(ids, "ids")?;
        if vocab_size <= 3 || context_len < 2 {
            return Err(Failure::new(LaclipStatus::InvalidArgument, "vocab_size must exceed 3 and context_len be >= 2"));
        }
        let seq = Tokenizer::new(vocab_size, context_len).tokenize(c_str(text, "text")?);
        std::slice::from_raw_parts_mut(ids, context_len).copy_from_slice(&seq.ids);
        Ok(())
    })
}

/// A trained checkpoint.
pub struct LaclipModel(Checkpoint);

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn laclip_model_load(path: *const c_char, out: *mut *mut LaclipModel) -> LaclipStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = c_str(path, "path")?;
        if !Path::new(path).is_file() {
            return Err(Failure::new(LaclipStatus::Io, format!("{path}: no such file")));
        }
        let ck = Checkpoint::read(path).map_err(|e| Failure::new(LaclipStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(LaclipModel(ck)));
        Ok(())
    })
}

/// Embedding width and expected image feature width.
///
/// # Safety
/// `model` must be a live handle; non-NULL outputs writable.
#[no_mangle]
pub unsafe extern "C" fn laclip_model_dims(
    model: *const LaclipModel,
    embed_dim: *mut usize,
    image_dim: *mut usize,
) -> LaclipStatus {
    guard(|| {
        non_null(model, "model")?;
        let dims = (*model).0.params.dims();
        if !embed_dim.is_null() {
            *embed_dim = dims.embed_dim;
        }
        if !image_dim.is_null() {
            *image_dim = dims.image_dim;
        }
        Ok(())
    })
}

/// Unit-norm text embeddings of `n` strings into `out` (`n * embed_dim` values).
///
/// # Safety
/// `texts` must hold `n` NUL-terminated strings; `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn laclip_model_encode_texts(
    model: *const LaclipModel,
    texts: *const *const c_char,
    n: usize,
    out: *mut f64,
    len: usize,
) -> LaclipStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(texts, "texts")?;
        if n == 0 {
            return Err(Failure::new(LaclipStatus::InvalidArgument, "no texts"));
        }
        let ck = &(*model).0;
        let tokenizer = ck.config.tokenizer();
        let seqs = std::slice::from_raw_parts(texts, n)
            .iter()
            .map(|&p| c_str(p, "text").map(|t| tokenizer.tokenize(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let emb = encode_text(&ck.params, &seqs).map_err(|e| Failure::new(LaclipStatus::InvalidArgument, e.to_string()))?;
        copy_out(&emb.embeddings.into_inner(), out, len)
    })
}

/// Unit-norm image embeddings of `n` feature rows of width `dim`.
///
/// # Safety
/// `features` must hold `n * dim` doubles; `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn laclip_model_encode_images(
    model: *const LaclipModel,
    features: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
    len: usize,
) -> LaclipStatus {
    guard(|| {
        non_null(model, "model")?;
        let ck = &(*model).0;
        let x = matrix(features, n, dim, "features")?;
        let emb = encode_image(&ck.params, x).map_err(|e| Failure::new(LaclipStatus::ShapeMismatch, e.to_string()))?;
        copy_out(&emb.embeddings.into_inner(), out, len)
    })
}

/// # Safety
/// `model` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn laclip_model_free(model: *mut LaclipModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

//! C ABI over the `sdid` crate.
//!
//! Every fallible function returns an [`SdidStatus`]; on failure the message
//! is kept per thread and read back with [`sdid_last_error`]. Images cross the
//! boundary as contiguous `float` buffers in `[C,H,W]` order, values in `[0,1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sdid::analysis::{autoencode, denoise_with_style, extract_style, psnr, sample_styles};
use sdid::cli::load_model;
use sdid::ndgrad::{Rng, Tensor};
use sdid::sdidnet::{count_params, Model, ModelConfig, StyleKind, StyleVector};
use sdid::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Format = 5,
    Io = 6,
    Numerical = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct SdidModel {
    model: Model<f32>,
    seed: u64,
}

/// Static facts about a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SdidModelInfo {
    pub in_channels: usize,
    /// Image height and width must be multiples of this.
    pub size_multiple: usize,
    pub style_dim: usize,
    pub param_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SdidStatus {
    match e {
        Error::Dimension(_) => SdidStatus::Dimension,
        Error::Config(_) => SdidStatus::Config,
        Error::Format(_) => SdidStatus::Format,
        Error::Io { .. } => SdidStatus::Io,
        Error::Numerical(_) | Error::Backward(_) => SdidStatus::Numerical,
        Error::Invalid(_) => SdidStatus::InvalidArgument,
    }
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

/// Run `f`, translating errors and panics into a status and the last-error slot.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdidStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdidStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SdidStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdidStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const SdidModel) -> Result<&'a SdidModel, Fail> {
    m.as_ref().ok_or(Fail::Null("model"))
}

/// Copy a `[c,h,w]` image in after checking it against the model.
unsafe fn image_in(
    m: &SdidModel,
    data: *const f32,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<f32>, Fail> {
    if data.is_null() {
        return Err(Fail::Null("image"));
    }
    let cfg = m.model.cfg();
    if c != cfg.in_channels {
        return Err(Error::Dimension(format!(
            "image has {c} channels, model expects {}",
            cfg.in_channels
        ))
        .into());
    }
    let k = cfg.size_multiple();
    if h == 0 || w == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(
            Error::Dimension(format!("image {h}x{w} is not a nonzero multiple of {k}")).into(),
        );
    }
    let n = c * h * w;
    let v = std::slice::from_raw_parts(data, n).to_vec();
    Ok(Tensor::new(&[c, h, w], v)?)
}

unsafe fn image_out(img: &Tensor<f32>, out: *mut f32) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output"));
    }
    std::ptr::copy_nonoverlapping(img.data().as_ptr(), out, img.data().len());
    Ok(())
}

fn boxed(model: Model<f32>, seed: u64, out: *mut *mut SdidModel) -> Result<(), Fail> {
    let h = Box::into_raw(Box::new(SdidModel { model, seed }));
    // SAFETY: checked non-null by the callers before any work.
    unsafe { *out = h };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn sdid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint written by `sdid train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sdid_model_load(
    path: *const c_char,
    out: *mut *mut SdidModel,
) -> SdidStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Invalid("path is not UTF-8".into()))?;
        let (model, cfg) = load_model(Path::new(p))?;
        boxed(model, cfg.seed, out)
    })
}

/// Fresh, untrained desk-preset model initialized from `seed`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sdid_model_new_desk(seed: u64, out: *mut *mut SdidModel) -> SdidStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        boxed(Model::new(&ModelConfig::desk(), seed)?, seed, out)
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdid_model_free(m: *mut SdidModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn sdid_model_info(
    m: *const SdidModel,
    info: *mut SdidModelInfo,
) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        let info = info.as_mut().ok_or(Fail::Null("info"))?;
        let cfg = m.model.cfg();
        *info = SdidModelInfo {
            in_channels: cfg.in_channels,
            size_multiple: cfg.size_multiple(),
            style_dim: cfg.style_dim,
            param_count: count_params(cfg),
        };
        Ok(())
    })
}

/// Denoise with a style drawn from the generator. Equal seeds give equal output.
///
/// # Safety
/// `input` and `output` must each hold `c*h*w` floats.
#[no_mangle]
pub unsafe extern "C" fn sdid_denoise(
    m: *const SdidModel,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    seed: u64,
    output: *mut f32,
) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        let x = image_in(m, input, c, h, w)?;
        let style = sample_styles(&m.model, 1, &mut Rng::new(seed))?.remove(0);
        image_out(&denoise_with_style(&m.model, &x, &style)?, output)
    })
}

/// Style vector of an image; `style_len` must equal the model's style_dim.
///
/// # Safety
/// `input` must hold `c*h*w` floats and `style` `style_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sdid_extract_style(
    m: *const SdidModel,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    style: *mut f32,
    style_len: usize,
) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        if style.is_null() {
            return Err(Fail::Null("style"));
        }
        let want = m.model.cfg().style_dim;
        if style_len != want {
            return Err(Error::Dimension(format!(
                "style buffer holds {style_len}, model style_dim is {want}"
            ))
            .into());
        }
        let x = image_in(m, input, c, h, w)?;
        let s = extract_style(&m.model, &x, StyleKind::NoiseFree)?;
        for (dst, v) in std::slice::from_raw_parts_mut(style, style_len)
            .iter_mut()
            .zip(&s.values)
        {
            *dst = *v as f32;
        }
        Ok(())
    })
}

/// Denoise with an explicit style vector.
///
/// # Safety
/// `input`/`output` must hold `c*h*w` floats, `style` `style_len` floats.
#[no_mangle]
pub unsafe extern "C" fn sdid_denoise_with_style(
    m: *const SdidModel,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    style: *const f32,
    style_len: usize,
    output: *mut f32,
) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        if style.is_null() {
            return Err(Fail::Null("style"));
        }
        let want = m.model.cfg().style_dim;
        if style_len != want {
            return Err(Error::Dimension(format!(
                "style has {style_len} values, model style_dim is {want}"
            ))
            .into());
        }
        let x = image_in(m, input, c, h, w)?;
        let values = std::slice::from_raw_parts(style, style_len)
            .iter()
            .map(|v| *v as f64)
            .collect();
        let s = StyleVector::new(values, StyleKind::Mixed)?;
        image_out(&denoise_with_style(&m.model, &x, &s)?, output)
    })
}

/// `dec(enc(x))`, bypassing style conversion.
///
/// # Safety
/// `input` and `output` must each hold `c*h*w` floats.
#[no_mangle]
pub unsafe extern "C" fn sdid_autoencode(
    m: *const SdidModel,
    input: *const f32,
    c: usize,
    h: usize,
    w: usize,
    output: *mut f32,
) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        let x = image_in(m, input, c, h, w)?;
        image_out(&autoencode(&m.model, &x)?, output)
    })
}

/// Seed stored with the model (the run seed for loaded checkpoints).
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdid_model_seed(m: *const SdidModel, seed: *mut u64) -> SdidStatus {
    guard(|| {
        let m = model_ref(m)?;
        *seed.as_mut().ok_or(Fail::Null("seed"))? = m.seed;
        Ok(())
    })
}

/// PSNR in dB between two buffers of `n` values with the given peak.
///
/// # Safety
/// `a` and `b` must hold `n` floats, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdid_psnr(
    a: *const f32,
    b: *const f32,
    n: usize,
    peak: f64,
    out: *mut f64,
) -> SdidStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(Fail::Null("image"));
        }
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let t = |p: *const f32| Tensor::new(&[n], std::slice::from_raw_parts(p, n).to_vec());
        *out = psnr(&t(a)?, &t(b)?, peak)?;
        Ok(())
    })
}

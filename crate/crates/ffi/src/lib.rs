//! C ABI for disque.
//!
//! Models and images are opaque heap handles. Every fallible call returns a
//! [`DisqueStatus`]; on failure the message is kept per thread and can be read
//! with [`disque_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use disque::egip::{egip_apply, EgipOptions, EgipRequest, Mode};
use disque::network::{DualHeadUNet, NetConfig};
use disque::pixelcore::{load_image, Colorspace, Image};
use disque::quality::{extract_features, feature_len, fr_feature};
use disque::{Error, ErrorClass};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisqueStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    /// The caller's output buffer has the wrong length.
    BufferSize = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisqueColorspace {
    Srgb = 0,
    Pq = 1,
    Linear = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisqueMode {
    Mixing = 0,
    Replacement = 1,
}

/// Opaque trained network.
pub struct DisqueModel(DualHeadUNet);

/// Opaque RGB float image, row-major, channels interleaved.
pub struct DisqueImage(Image);

impl From<DisqueColorspace> for Colorspace {
    fn from(c: DisqueColorspace) -> Self {
        match c {
            DisqueColorspace::Srgb => Colorspace::Srgb,
            DisqueColorspace::Pq => Colorspace::PqBt2100,
            DisqueColorspace::Linear => Colorspace::Linear,
        }
    }
}

impl From<Colorspace> for DisqueColorspace {
    fn from(c: Colorspace) -> Self {
        match c {
            Colorspace::Srgb => DisqueColorspace::Srgb,
            Colorspace::PqBt2100 => DisqueColorspace::Pq,
            Colorspace::Linear => DisqueColorspace::Linear,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Buffer(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DisqueStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DisqueStatus::Ok,
        Ok(Err(Failure::Null(arg))) => {
            set_error(format!("`{arg}` is null"));
            DisqueStatus::NullArgument
        }
        Ok(Err(Failure::Buffer(msg))) => {
            set_error(msg);
            DisqueStatus::BufferSize
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.class() {
                ErrorClass::Config => DisqueStatus::Config,
                ErrorClass::Data => DisqueStatus::Data,
                ErrorClass::Numerical => DisqueStatus::Numerical,
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DisqueStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn disque_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn disque_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `disque train`.
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn disque_model_load(path: *const c_char, out: *mut *mut DisqueModel) -> DisqueStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Error::Config("path is not valid UTF-8".into()))?;
        let model = disque::trainer::load_model(path)?;
        *out = Box::into_raw(Box::new(DisqueModel(model)));
        Ok(())
    })
}

/// Builds an untrained toy-sized network from a seed. Meant for smoke tests.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn disque_model_new_toy(seed: u64, out: *mut *mut DisqueModel) -> DisqueStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let model = DualHeadUNet::new(NetConfig::toy(), seed)?;
        *out = Box::into_raw(Box::new(DisqueModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn disque_model_free(model: *mut DisqueModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Length of the full-reference feature vector, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn disque_model_feature_len(model: *const DisqueModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| feature_len(m.0.config()))
}

/// Copies `height * width * 3` floats into a new image.
///
/// # Safety
/// `data` must point to that many readable floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn disque_image_from_rgb(
    data: *const f32,
    height: usize,
    width: usize,
    colorspace: DisqueColorspace,
    out: *mut *mut DisqueImage,
) -> DisqueStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let n = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Error::Size(format!("{height}x{width} overflows")))?;
        let pixels = unsafe { std::slice::from_raw_parts(data, n) }.to_vec();
        let img = Image::from_vec(height, width, pixels, colorspace.into())?;
        *out = Box::into_raw(Box::new(DisqueImage(img)));
        Ok(())
    })
}

/// Decodes a PNG or JPEG file.
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn disque_image_load(
    path: *const c_char,
    colorspace: DisqueColorspace,
    out: *mut *mut DisqueImage,
) -> DisqueStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Error::Config("path is not valid UTF-8".into()))?;
        let img = load_image(path, colorspace.into())?;
        *out = Box::into_raw(Box::new(DisqueImage(img)));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn disque_image_free(image: *mut DisqueImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

/// # Safety
/// `image` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn disque_image_info(
    image: *const DisqueImage,
    height: *mut usize,
    width: *mut usize,
    colorspace: *mut DisqueColorspace,
) -> DisqueStatus {
    guard(|| {
        let img = &unsafe { as_ref(image, "image") }?.0;
        *unsafe { out_ptr(height, "height") }? = img.height();
        *unsafe { out_ptr(width, "width") }? = img.width();
        *unsafe { out_ptr(colorspace, "colorspace") }? = img.colorspace().into();
        Ok(())
    })
}

/// Copies the pixels into `out`, which must hold exactly `height * width * 3` floats.
///
/// # Safety
/// `image` must be a live handle and `out` point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn disque_image_read(image: *const DisqueImage, out: *mut f32, len: usize) -> DisqueStatus {
    guard(|| {
        let data = unsafe { as_ref(image, "image") }?.0.data();
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if len != data.len() {
            return Err(Failure::Buffer(format!("buffer holds {len} floats, image has {}", data.len())));
        }
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(data);
        Ok(())
    })
}

/// Full-reference feature `|z(ref) − z(dis)|` into `out`, which must hold
/// exactly [`disque_model_feature_len`] floats.
///
/// # Safety
/// Handles must be live and `out` point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn disque_fr_features(
    model: *const DisqueModel,
    reference: *const DisqueImage,
    distorted: *const DisqueImage,
    out: *mut f32,
    len: usize,
) -> DisqueStatus {
    guard(|| {
        let model = &unsafe { as_ref(model, "model") }?.0;
        let reference = &unsafe { as_ref(reference, "reference") }?.0;
        let distorted = &unsafe { as_ref(distorted, "distorted") }?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let d = feature_len(model.config());
        if len != d {
            return Err(Failure::Buffer(format!("buffer holds {len} floats, feature has {d}")));
        }
        let zr = extract_features(model, reference)?;
        let zd = extract_features(model, distorted)?;
        let f = fr_feature(&zr.z, &zd.z)?;
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(&f);
        Ok(())
    })
}

/// Applies the edit shown by `example_src -> example_tgt` to `input`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn disque_egip_apply(
    model: *const DisqueModel,
    example_src: *const DisqueImage,
    example_tgt: *const DisqueImage,
    input: *const DisqueImage,
    mode: DisqueMode,
    workers: usize,
    out: *mut *mut DisqueImage,
) -> DisqueStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = ptr::null_mut();
        let model = &unsafe { as_ref(model, "model") }?.0;
        let req = EgipRequest {
            example_src: unsafe { as_ref(example_src, "example_src") }?.0.clone(),
            example_tgt: unsafe { as_ref(example_tgt, "example_tgt") }?.0.clone(),
            input_src: unsafe { as_ref(input, "input") }?.0.clone(),
            mode: match mode {
                DisqueMode::Mixing => Mode::Mixing,
                DisqueMode::Replacement => Mode::Replacement,
            },
        };
        let opts = EgipOptions { workers: workers.max(1) };
        let img = egip_apply(&req, model, &opts)?;
        *out = Box::into_raw(Box::new(DisqueImage(img)));
        Ok(())
    })
}

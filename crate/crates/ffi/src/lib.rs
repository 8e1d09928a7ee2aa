//! C ABI over the detector.
//!
//! Every fallible function returns an [`FstxStatus`]; on failure the message
//! is available from [`fstx_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fastext::error::Error;
use fastext::image::RgbImage;
use fastext::model::{build_network, count_parameters, Network, NetworkConfig, WeightStore};
use fastext::pipeline::{detect_image, DetectedWord, RunConfig};
use fastext::weight_file;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FstxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A loaded network with its weights.
pub struct FstxNetwork {
    store: WeightStore,
    network: Network,
}

/// Words found by one detection call.
pub struct FstxDetections {
    words: Vec<DetectedWord>,
}

/// One word: corners `x1,y1,...,x4,y4` in original image pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FstxBox {
    pub corners: [f64; 8],
    pub score: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FstxRunConfig {
    pub seg_threshold: f64,
    pub link_threshold: f64,
    pub min_side: usize,
    pub pad_to: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FstxStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidStride(_)
        | Error::InvalidGroups(_)
        | Error::InputTooSmall { .. }
        | Error::DegenerateGeometry(_) => FstxStatus::InvalidArgument,
        Error::Io(_) | Error::File { .. } => FstxStatus::Io,
        Error::Format(_) | Error::Parse { .. } => FstxStatus::Format,
        Error::ShapeMismatch { .. } | Error::MissingWeight(_) | Error::ChannelOutOfRange { .. } => FstxStatus::Shape,
    }
}

enum Failure {
    Null(&'static str),
    Range(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FstxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FstxStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            FstxStatus::NullPointer
        }
        Ok(Err(Failure::Range(msg))) => {
            set_error(msg);
            FstxStatus::OutOfRange
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FstxStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn new_network(store: WeightStore) -> Result<*mut FstxNetwork, Failure> {
    let network = build_network(&store.config(), &store)?;
    Ok(Box::into_raw(Box::new(FstxNetwork { store, network })))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fstx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default detection settings.
#[no_mangle]
pub extern "C" fn fstx_run_config_default() -> FstxRunConfig {
    let d = RunConfig::default();
    FstxRunConfig {
        seg_threshold: d.seg_threshold,
        link_threshold: d.link_threshold,
        min_side: d.min_side,
        pad_to: d.pad_to,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fstx_network_load(path: *const c_char, out: *mut *mut FstxNetwork) -> FstxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        *out = new_network(weight_file::load(path)?)?;
        Ok(())
    })
}

/// Builds a network with deterministic pseudo-random weights.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fstx_network_generate(alpha: f32, seed: u64, out: *mut *mut FstxNetwork) -> FstxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = NetworkConfig::new(alpha);
        config.validate()?;
        *out = new_network(WeightStore::seeded(&config, seed))?;
        Ok(())
    })
}

/// # Safety
/// `network` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fstx_network_save(network: *const FstxNetwork, path: *const c_char) -> FstxStatus {
    guard(|| {
        let network = deref(network, "network")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        weight_file::save(path, &network.store)?;
        Ok(())
    })
}

/// # Safety
/// `network` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fstx_network_free(network: *mut FstxNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// # Safety
/// `network` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fstx_network_param_count(network: *const FstxNetwork, out: *mut usize) -> FstxStatus {
    guard(|| {
        let network = deref(network, "network")?;
        *out_ptr(out, "out")? = network.store.parameter_count();
        Ok(())
    })
}

/// Parameter count for a width multiplier, without building weights.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fstx_count_parameters(alpha: f32, out: *mut usize) -> FstxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = NetworkConfig::new(alpha);
        config.validate()?;
        *out = count_parameters(&config);
        Ok(())
    })
}

/// Detects words in an interleaved 8-bit RGB image of `width * height * 3` bytes.
///
/// # Safety
/// `network`, `config` and `out` must be valid pointers and `rgb` must point
/// to at least `width * height * 3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn fstx_detect_rgb(
    network: *const FstxNetwork,
    rgb: *const u8,
    width: usize,
    height: usize,
    config: *const FstxRunConfig,
    out: *mut *mut FstxDetections,
) -> FstxStatus {
    guard(|| {
        let network = deref(network, "network")?;
        let c = deref(config, "config")?;
        let out = out_ptr(out, "out")?;
        if rgb.is_null() {
            return Err(Failure::Null("rgb"));
        }
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::InvalidArgument("image size overflows".into()))?;
        let image = RgbImage::new(width, height, std::slice::from_raw_parts(rgb, len).to_vec())?;
        let run = RunConfig {
            seg_threshold: c.seg_threshold,
            link_threshold: c.link_threshold,
            min_side: c.min_side,
            pad_to: c.pad_to,
        };
        let words = detect_image(&network.network, &image, &run)?;
        *out = Box::into_raw(Box::new(FstxDetections { words }));
        Ok(())
    })
}

/// Number of words; 0 for a null handle.
///
/// # Safety
/// `detections` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fstx_detections_len(detections: *const FstxDetections) -> usize {
    detections.as_ref().map_or(0, |d| d.words.len())
}

/// # Safety
/// `detections` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fstx_detections_get(
    detections: *const FstxDetections,
    index: usize,
    out: *mut FstxBox,
) -> FstxStatus {
    guard(|| {
        let d = deref(detections, "detections")?;
        let out = out_ptr(out, "out")?;
        let w = d
            .words
            .get(index)
            .ok_or_else(|| Failure::Range(format!("index {index} out of range for {} words", d.words.len())))?;
        let mut corners = [0.0; 8];
        for (i, p) in w.corners.iter().enumerate() {
            corners[2 * i] = p.x;
            corners[2 * i + 1] = p.y;
        }
        *out = FstxBox { corners, score: w.score };
        Ok(())
    })
}

/// # Safety
/// `detections` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fstx_detections_free(detections: *mut FstxDetections) {
    if !detections.is_null() {
        drop(Box::from_raw(detections));
    }
}

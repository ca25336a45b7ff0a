//! sRGB and SMPTE ST 2084 (PQ) transfer functions. Scalar curves are
//! evaluated in f64; image conversions clip as their final step.

use super::{Colorspace, Image};
use crate::error::{Error, Result};

/// Absolute luminance of PQ full-scale code.
pub const PQ_PEAK_NITS: f64 = 10_000.0;
/// Default normalization ceiling when decoding PQ to relative linear light.
pub const DEFAULT_PEAK_NITS: f64 = 1_000.0;

const PQ_M1: f64 = 2610.0 / 16384.0;
const PQ_M2: f64 = 2523.0 / 4096.0 * 128.0;
const PQ_C1: f64 = 3424.0 / 4096.0;
const PQ_C2: f64 = 2413.0 / 4096.0 * 32.0;
const PQ_C3: f64 = 2392.0 / 4096.0 * 32.0;

/// sRGB code value to linear light.
pub fn srgb_eotf(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear light to sRGB code value.
pub fn srgb_inverse_eotf(l: f64) -> f64 {
    if l <= 0.0031308 {
        l * 12.92
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

/// PQ code value in [0, 1] to absolute luminance in nits.
pub fn pq_eotf(e: f64) -> f64 {
    let e = e.clamp(0.0, 1.0);
    let p = e.powf(1.0 / PQ_M2);
    let num = (p - PQ_C1).max(0.0);
    let den = PQ_C2 - PQ_C3 * p;
    PQ_PEAK_NITS * (num / den).powf(1.0 / PQ_M1)
}

/// Absolute luminance in nits to PQ code value.
pub fn pq_inverse_eotf(nits: f64) -> f64 {
    let y = (nits / PQ_PEAK_NITS).clamp(0.0, 1.0);
    let p = y.powf(PQ_M1);
    ((PQ_C1 + PQ_C2 * p) / (1.0 + PQ_C3 * p)).powf(PQ_M2)
}

fn check_peak(peak_nits: f64) -> Result<()> {
    if peak_nits > 0.0 && peak_nits.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("peak_nits must be positive, got {peak_nits}")))
    }
}

fn convert(img: &Image, target: Colorspace, f: impl Fn(f64) -> f64) -> Image {
    let data = img.data().iter().map(|&v| f(v as f64).clamp(0.0, 1.0) as f32).collect();
    img.with_data(data).with_colorspace(target)
}

pub fn srgb_to_linear(img: &Image) -> Result<Image> {
    img.expect_colorspace(Colorspace::Srgb)?;
    Ok(convert(img, Colorspace::Linear, srgb_eotf))
}

pub fn linear_to_srgb(img: &Image) -> Result<Image> {
    img.expect_colorspace(Colorspace::Linear)?;
    Ok(convert(img, Colorspace::Srgb, srgb_inverse_eotf))
}

/// Decodes PQ to linear light relative to `peak_nits` (values above the peak clip).
pub fn pq_to_linear(img: &Image, peak_nits: f64) -> Result<Image> {
    check_peak(peak_nits)?;
    img.expect_colorspace(Colorspace::PqBt2100)?;
    Ok(convert(img, Colorspace::Linear, |v| pq_eotf(v) / peak_nits))
}

pub fn linear_to_pq(img: &Image, peak_nits: f64) -> Result<Image> {
    check_peak(peak_nits)?;
    img.expect_colorspace(Colorspace::Linear)?;
    Ok(convert(img, Colorspace::PqBt2100, |v| pq_inverse_eotf(v * peak_nits)))
}

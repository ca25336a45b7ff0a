use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::color::rgb_to_hsv;
use super::{Colorspace, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Image,
    pub source_id: String,
    /// (row, col) of the top-left corner in the source image.
    pub offset: (usize, usize),
}

/// Draws a uniformly placed square crop. Deterministic for a fixed seed.
pub fn sample_patch(img: &Image, patch_size: usize, seed: u64) -> Result<Patch> {
    let (h, w) = img.dims();
    if patch_size == 0 || h < patch_size || w < patch_size {
        return Err(Error::Size(format!(
            "image {h}x{w} is smaller than patch size {patch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = rng.random_range(0..=h - patch_size);
    let col = rng.random_range(0..=w - patch_size);
    Ok(Patch {
        image: img.crop(row, col, patch_size, patch_size)?,
        source_id: String::new(),
        offset: (row, col),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningThresholds {
    /// Largest tolerated fraction of pixels with luma above 0.98.
    pub over: f64,
    /// Largest tolerated fraction of pixels with luma below 0.02.
    pub under: f64,
    /// Mean HSV saturation below which an image counts as grayscale.
    pub saturation: f64,
}

impl Default for ScreeningThresholds {
    fn default() -> Self {
        ScreeningThresholds {
            over: 0.30,
            under: 0.30,
            saturation: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub is_grayscale: bool,
    pub overexposed_fraction: f64,
    pub underexposed_fraction: f64,
    pub accepted: bool,
}

const OVER_LUMA: f32 = 0.98;
const UNDER_LUMA: f32 = 0.02;

/// Flags grayscale and badly exposed images.
///
/// Luma uses BT.709 weights on the decoded sRGB code values.
pub fn screen_image(img: &Image, thresholds: &ScreeningThresholds) -> Result<ScreeningReport> {
    img.expect_colorspace(Colorspace::Srgb)?;
    let n = (img.height() * img.width()) as f64;
    let mean_sat = img.pixels().map(|p| rgb_to_hsv(p)[1] as f64).sum::<f64>() / n;
    let luma = img.luma709();
    let over = luma.iter().filter(|&&y| y > OVER_LUMA).count() as f64 / n;
    let under = luma.iter().filter(|&&y| y < UNDER_LUMA).count() as f64 / n;
    let is_grayscale = mean_sat < thresholds.saturation;
    Ok(ScreeningReport {
        is_grayscale,
        overexposed_fraction: over,
        underexposed_fraction: under,
        accepted: !is_grayscale && over <= thresholds.over && under <= thresholds.under,
    })
}

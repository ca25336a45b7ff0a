//! Pixel representations shared by every other module: the [`Image`] type,
//! transfer functions, color models, patch sampling, dataset screening and
//! file IO.

mod color;
mod io;
mod patch;
mod transfer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use color::{
    color_convert, color_convert_back, hsv_to_rgb, lab_to_srgb, rgb_to_hsv, rgb_to_yuv,
    srgb_to_lab, yuv_to_rgb, ChannelImage, ColorModel,
};
pub use io::{load_image, save_png16, save_png8};
pub use patch::{sample_patch, screen_image, Patch, ScreeningReport, ScreeningThresholds};
pub use transfer::{
    linear_to_pq, linear_to_srgb, pq_eotf, pq_inverse_eotf, pq_to_linear, srgb_eotf,
    srgb_inverse_eotf, srgb_to_linear, DEFAULT_PEAK_NITS, PQ_PEAK_NITS,
};

/// BT.709 luma weights, applied to whatever RGB encoding the caller holds.
pub const BT709_LUMA: [f32; 3] = [0.2126, 0.7152, 0.0722];
/// BT.2020 luma weights.
pub const BT2020_LUMA: [f32; 3] = [0.2627, 0.6780, 0.0593];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Colorspace {
    Srgb,
    PqBt2100,
    Linear,
}

impl Colorspace {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SRGB" => Ok(Colorspace::Srgb),
            "PQ" | "PQ_BT2100" => Ok(Colorspace::PqBt2100),
            "LINEAR" => Ok(Colorspace::Linear),
            other => Err(Error::Config(format!("unknown colorspace `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Colorspace::Srgb => "SRGB",
            Colorspace::PqBt2100 => "PQ_BT2100",
            Colorspace::Linear => "LINEAR",
        }
    }
}

/// Where the pixels originally came from. Provenance only; all math is float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitOrigin {
    EightBit,
    TenBit,
}

/// An H×W×3 float image with values in [0, 1], stored row-major and
/// channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
    colorspace: Colorspace,
    bit_origin: BitOrigin,
}

impl Image {
    /// Builds an image from interleaved RGB data. Values must be finite; they
    /// are clipped to [0, 1].
    pub fn from_vec(height: usize, width: usize, mut data: Vec<f32>, colorspace: Colorspace) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Size(format!("image must be at least 1x1, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample at index {bad}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            height,
            width,
            data,
            colorspace,
            bit_origin: BitOrigin::EightBit,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3], colorspace: Colorspace) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Image::from_vec(height, width, data, colorspace)
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        colorspace: Colorspace,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Image::from_vec(height, width, data, colorspace)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }

    pub fn bit_origin(&self) -> BitOrigin {
        self.bit_origin
    }

    pub fn with_bit_origin(mut self, origin: BitOrigin) -> Self {
        self.bit_origin = origin;
        self
    }

    /// Re-tags the pixels without converting them.
    pub fn with_colorspace(mut self, colorspace: Colorspace) -> Self {
        self.colorspace = colorspace;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub(crate) fn expect_colorspace(&self, expected: Colorspace) -> Result<()> {
        if self.colorspace == expected {
            Ok(())
        } else {
            Err(Error::ColorspaceMismatch {
                expected,
                actual: self.colorspace,
            })
        }
    }

    /// Applies `f` to every pixel and clips the result. Keeps the colorspace tag.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.pixels() {
            let q = f(p);
            data.extend(q.iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }));
        }
        Image {
            data,
            ..self.clone()
        }
    }

    /// Replaces the sample buffer, clipping to [0, 1]. Non-finite values map to 0.
    pub(crate) fn with_data(&self, mut data: Vec<f32>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Image {
            data,
            ..self.clone()
        }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::Size(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in row..row + height {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Image {
            height,
            width,
            data,
            ..self.clone()
        })
    }

    /// Reflect-pads (mirror without repeating the edge sample) on the bottom and
    /// right so the result is `height`×`width`.
    pub fn pad_reflect_to(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(Error::Size("pad target smaller than image".into()));
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        Image::from_fn(height, width, self.colorspace, |r, c| {
            self.pixel(reflect(r, self.height), reflect(c, self.width))
        })
        .map(|img| img.with_bit_origin(self.bit_origin))
    }

    /// Mean of every sample across all three channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for p in self.pixels() {
            for k in 0..3 {
                acc[k] += p[k] as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        acc.map(|v| v / n)
    }

    /// Mean squared error over all samples.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn psnr(&self, other: &Image) -> Result<f64> {
        let mse = self.mse(other)?;
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let buf = self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer size matches dims")
    }

    pub fn from_rgb8(img: &image::RgbImage, colorspace: Colorspace) -> Image {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
            colorspace,
            bit_origin: BitOrigin::EightBit,
        }
    }

    pub(crate) fn to_rgb32f(&self) -> image::Rgb32FImage {
        image::Rgb32FImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches dims")
    }

    pub(crate) fn with_rgb32f(&self, img: image::Rgb32FImage) -> Image {
        let height = img.height() as usize;
        let width = img.width() as usize;
        let mut data = img.into_raw();
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Image {
            height,
            width,
            data,
            ..self.clone()
        }
    }

    /// Resamples to `height`×`width` with the given filter. Downscaling with
    /// the triangle filter is antialiased.
    pub fn resize(&self, height: usize, width: usize, filter: image::imageops::FilterType) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::Size(format!("cannot resize to {height}x{width}")));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let out = image::imageops::resize(&self.to_rgb32f(), width as u32, height as u32, filter);
        Ok(self.with_rgb32f(out))
    }

    /// Half-resolution copy (bilinear with antialiasing).
    pub fn half_scale(&self) -> Result<Image> {
        self.resize(
            (self.height / 2).max(1),
            (self.width / 2).max(1),
            image::imageops::FilterType::Triangle,
        )
    }

    /// Per-pixel BT.709 luma of the stored values.
    pub fn luma709(&self) -> Vec<f32> {
        self.pixels()
            .map(|p| BT709_LUMA[0] * p[0] + BT709_LUMA[1] * p[1] + BT709_LUMA[2] * p[2])
            .collect()
    }
}

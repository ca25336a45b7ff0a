//! HSV, CIELAB (D65) and BT.601 YUV conversions defined on sRGB-encoded
//! pixels.

use std::str::FromStr;

use super::transfer::{srgb_eotf, srgb_inverse_eotf};
use super::{Colorspace, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorModel {
    Hsv,
    Cielab,
    Yuv,
}

impl FromStr for ColorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HSV" => Ok(ColorModel::Hsv),
            "CIELAB" | "LAB" => Ok(ColorModel::Cielab),
            "YUV" => Ok(ColorModel::Yuv),
            other => Err(Error::Config(format!("unsupported color model `{other}`"))),
        }
    }
}

/// Three-channel array in a non-RGB color model. Values are not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    pub height: usize,
    pub width: usize,
    pub model: ColorModel,
    pub data: Vec<f32>,
}

impl ChannelImage {
    pub fn channel(&self, k: usize) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().skip(k).step_by(3).copied()
    }
}

pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, v]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

// D65 reference white.
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D {
        t * t * t
    } else {
        3.0 * D * D * (t - 4.0 / 29.0)
    }
}

/// sRGB-encoded RGB to CIELAB (L in [0, 100]).
pub fn srgb_to_lab(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb.map(|v| srgb_eotf(v as f64));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    [(116.0 * fy - 16.0) as f32, (500.0 * (fx - fy)) as f32, (200.0 * (fy - fz)) as f32]
}

/// CIELAB back to sRGB-encoded RGB (not clipped).
pub fn lab_to_srgb([l, a, b]: [f32; 3]) -> [f32; 3] {
    let fy = (l as f64 + 16.0) / 116.0;
    let fx = fy + a as f64 / 500.0;
    let fz = fy - b as f64 / 200.0;
    let (x, y, z) = (XN * lab_f_inv(fx), YN * lab_f_inv(fy), ZN * lab_f_inv(fz));
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let bb = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [r, g, bb].map(|v| {
        let e = srgb_inverse_eotf(v.max(0.0));
        e as f32
    })
}

/// BT.601 analog YUV on gamma-encoded RGB.
pub fn rgb_to_yuv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.147_13 * r - 0.288_86 * g + 0.436 * b;
    let v = 0.615 * r - 0.514_99 * g - 0.100_01 * b;
    [y, u, v]
}

pub fn yuv_to_rgb([y, u, v]: [f32; 3]) -> [f32; 3] {
    let r = y + 1.139_83 * v;
    let g = y - 0.394_65 * u - 0.580_60 * v;
    let b = y + 2.032_11 * u;
    [r, g, b]
}

/// Converts an sRGB image into the requested color model.
pub fn color_convert(img: &Image, target: ColorModel) -> Result<ChannelImage> {
    img.expect_colorspace(Colorspace::Srgb)?;
    let f = match target {
        ColorModel::Hsv => rgb_to_hsv,
        ColorModel::Cielab => srgb_to_lab,
        ColorModel::Yuv => rgb_to_yuv,
    };
    let data = img.pixels().flat_map(f).collect();
    Ok(ChannelImage {
        height: img.height(),
        width: img.width(),
        model: target,
        data,
    })
}

/// Inverse of [`color_convert`]; the result is clipped to [0, 1].
pub fn color_convert_back(ch: &ChannelImage) -> Result<Image> {
    let f = match ch.model {
        ColorModel::Hsv => hsv_to_rgb,
        ColorModel::Cielab => lab_to_srgb,
        ColorModel::Yuv => yuv_to_rgb,
    };
    let data = ch.data.chunks_exact(3).flat_map(|p| f([p[0], p[1], p[2]])).collect();
    Image::from_vec(ch.height, ch.width, data, Colorspace::Srgb)
}

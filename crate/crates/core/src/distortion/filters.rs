//! Small convolution and codec helpers used by the distortion and tone
//! mapping banks. All filters replicate the border sample.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::pixelcore::Image;

pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn clampi(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable convolution of an interleaved buffer with `channels` channels.
pub fn convolve_separable(data: &[f32], h: usize, w: usize, channels: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let mut acc = 0f32;
                for (t, &k) in kernel.iter().enumerate() {
                    let xx = clampi(x as isize + t as isize - r, w);
                    acc += k * data[(y * w + xx) * channels + ch];
                }
                tmp[(y * w + x) * channels + ch] = acc;
            }
        }
    }
    let mut out = vec![0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let mut acc = 0f32;
                for (t, &k) in kernel.iter().enumerate() {
                    let yy = clampi(y as isize + t as isize - r, h);
                    acc += k * tmp[(yy * w + x) * channels + ch];
                }
                out[(y * w + x) * channels + ch] = acc;
            }
        }
    }
    out
}

/// Dense 2-D convolution with an odd `size`×`size` kernel.
pub fn convolve2d(data: &[f32], h: usize, w: usize, channels: usize, kernel: &[f32], size: usize) -> Vec<f32> {
    let r = (size / 2) as isize;
    let taps: Vec<(isize, isize, f32)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, &k)| k != 0.0)
        .map(|(i, &k)| ((i / size) as isize - r, (i % size) as isize - r, k))
        .collect();
    let mut out = vec![0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx, k) in &taps {
                let yy = clampi(y as isize + dy, h);
                let xx = clampi(x as isize + dx, w);
                let src = (yy * w + xx) * channels;
                let dst = (y * w + x) * channels;
                for ch in 0..channels {
                    out[dst + ch] += k * data[src + ch];
                }
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let out = convolve_separable(img.data(), img.height(), img.width(), 3, &gaussian_kernel(sigma));
    img.with_data(out)
}

/// Encodes at `quality` with the baseline JPEG codec and decodes again.
pub fn jpeg_round_trip(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Domain(format!("JPEG quality {quality} outside 1..=100")));
    }
    let rgb = img.to_rgb8();
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality).encode_image(&rgb)?;
    let decoded = image::load(Cursor::new(buf), image::ImageFormat::Jpeg)?.to_rgb8();
    let out = Image::from_rgb8(&decoded, img.colorspace());
    Ok(img.with_data(out.into_data()))
}

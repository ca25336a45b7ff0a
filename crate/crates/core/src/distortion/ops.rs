use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::filters::{convolve2d, convolve_separable, gaussian_blur, gaussian_kernel, jpeg_round_trip};
use super::severity::{level, secondary_level};
use super::{UnitDistortion, UnitKind};
use crate::error::{Error, Result};
use crate::pixelcore::{hsv_to_rgb, lab_to_srgb, rgb_to_hsv, rgb_to_yuv, srgb_to_lab, yuv_to_rgb, Colorspace, Image};

/// Adds `delta` to every sample.
pub fn mean_shift(img: &Image, delta: f32) -> Image {
    img.map_pixels(|p| p.map(|v| v + delta))
}

/// Applies one unit distortion. The output always has the input's dimensions.
pub fn apply_unit(img: &Image, d: &UnitDistortion) -> Result<Image> {
    img.expect_colorspace(Colorspace::Srgb)?;
    let s = d.severity();
    let v = level(d.kind, s);
    let mut rng = ChaCha8Rng::seed_from_u64(d.noise_seed);
    use UnitKind::*;
    let out = match d.kind {
        NNResize => resize_cycle(img, v, FilterType::Nearest)?,
        BilinearResize => resize_cycle(img, v, FilterType::Triangle)?,
        BicubicResize => resize_cycle(img, v, FilterType::CatmullRom)?,
        LanczosResize => resize_cycle(img, v, FilterType::Lanczos3)?,
        MotionBlur => motion_blur(img, v as usize, rng.random_range(0.0..std::f32::consts::PI)),
        GaussianBlur => gaussian_blur(img, v as f32),
        LensBlur => lens_blur(img, v as usize),
        MeanShift => mean_shift(img, v as f32),
        Contrast => contrast(img, v as f32),
        Compress => jpeg_round_trip(img, v as u8)?,
        UnsharpMasking => {
            let blurred = gaussian_blur(img, secondary_level(d.kind, s) as f32);
            let a = v as f32;
            let data = img.data().iter().zip(blurred.data()).map(|(&x, &b)| x + a * (x - b)).collect();
            img.with_data(data)
        }
        ColorBlock => color_block(img, v as usize, secondary_level(d.kind, s) as usize, &mut rng),
        Jitter => jitter(img, v as f32, &mut rng),
        PatchJitter => patch_jitter(img, v as f32, secondary_level(d.kind, s) as usize, &mut rng),
        RGBNoise => {
            let sigma = v as f32;
            let data = img.data().iter().map(|&x| x + sigma * rng.sample::<f32, _>(StandardNormal)).collect();
            img.with_data(data)
        }
        YUVNoise => {
            let sigma = v as f32;
            img.map_pixels(|p| {
                let yuv = rgb_to_yuv(p).map(|c| c + sigma * rng.sample::<f32, _>(StandardNormal));
                yuv_to_rgb(yuv)
            })
        }
        ImpulseNoise => {
            let prob = v as f32;
            img.map_pixels(|p| {
                let hit = rng.random::<f32>() < prob;
                let salt = rng.random::<bool>();
                if hit {
                    [if salt { 1.0 } else { 0.0 }; 3]
                } else {
                    p
                }
            })
        }
        SpeckleNoise => {
            let sigma = v as f32;
            let data = img
                .data()
                .iter()
                .map(|&x| x * (1.0 + sigma * rng.sample::<f32, _>(StandardNormal)))
                .collect();
            img.with_data(data)
        }
        Denoise => {
            let sigma = v as f32;
            let noisy: Vec<f32> = img.data().iter().map(|&x| x + sigma * rng.sample::<f32, _>(StandardNormal)).collect();
            let noisy = img.with_data(noisy);
            gaussian_blur(&noisy, secondary_level(d.kind, s) as f32)
        }
        Brighten => {
            let g = 1.0 / v as f32;
            img.map_pixels(|p| p.map(|x| x.powf(g)))
        }
        Darken => {
            let g = v as f32;
            img.map_pixels(|p| p.map(|x| x.powf(g)))
        }
        ColorDiffuse => color_diffuse(img, v as f32),
        ColorShift => color_shift(img, v as isize),
        HSVSaturate => {
            let f = v as f32;
            img.map_pixels(|p| {
                let [h, sat, val] = rgb_to_hsv(p);
                hsv_to_rgb([h, (sat * f).min(1.0), val])
            })
        }
        LABSaturate => {
            let f = v as f32;
            img.map_pixels(|p| {
                let [l, a, b] = srgb_to_lab(p);
                lab_to_srgb([l, a * f, b * f])
            })
        }
    };
    debug_assert_eq!(out.dims(), img.dims());
    Ok(out)
}

fn resize_cycle(img: &Image, scale: f64, up: FilterType) -> Result<Image> {
    let (h, w) = img.dims();
    let dh = (h as f64 * scale).round() as usize;
    let dw = (w as f64 * scale).round() as usize;
    if dh < 2 || dw < 2 {
        return Err(Error::Size(format!("{h}x{w} image too small for resize factor {scale:.3}")));
    }
    let down = img.resize(dh, dw, FilterType::CatmullRom)?;
    down.resize(h, w, up)
}

fn motion_blur(img: &Image, length: usize, angle: f32) -> Image {
    let size = length | 1;
    let c = (size / 2) as f32;
    let mut k = vec![0f32; size * size];
    let half = (length as f32 - 1.0) / 2.0;
    let steps = 4 * length;
    for i in 0..=steps {
        let t = -half + 2.0 * half * i as f32 / steps as f32;
        let x = c + t * angle.cos();
        let y = c + t * angle.sin();
        // Bilinear splat of the line sample.
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as usize + dy, x0 as usize + dx);
                if yy < size && xx < size {
                    k[yy * size + xx] += wy * wx;
                }
            }
        }
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    img.with_data(convolve2d(img.data(), img.height(), img.width(), 3, &k, size))
}

fn lens_blur(img: &Image, radius: usize) -> Image {
    let size = 2 * radius + 1;
    let r = radius as f32;
    let mut k: Vec<f32> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f32 - r;
            let x = (i % size) as f32 - r;
            if x * x + y * y <= r * r + 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    img.with_data(convolve2d(img.data(), img.height(), img.width(), 3, &k, size))
}

fn contrast(img: &Image, gain: f32) -> Image {
    let sig = |x: f32| 1.0 / (1.0 + (-gain * (x - 0.5)).exp());
    let (lo, hi) = (sig(0.0), sig(1.0));
    img.map_pixels(|p| p.map(|x| (sig(x) - lo) / (hi - lo)))
}

/// Later blocks go underneath earlier ones, so a higher count only ever
/// adds painted pixels to what a lower count (same seed) paints.
fn color_block(img: &Image, count: usize, side: usize, rng: &mut ChaCha8Rng) -> Image {
    let (h, w) = img.dims();
    let side = side.min(h).min(w);
    let mut data = img.data().to_vec();
    let mut painted = vec![false; h * w];
    for _ in 0..count {
        let r0 = rng.random_range(0..=h - side);
        let c0 = rng.random_range(0..=w - side);
        let color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                if !std::mem::replace(&mut painted[r * w + c], true) {
                    let i = (r * w + c) * 3;
                    data[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    img.with_data(data)
}

fn jitter(img: &Image, max_offset: f32, rng: &mut ChaCha8Rng) -> Image {
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let dy = (rng.random_range(-1.0f32..=1.0) * max_offset).round() as isize;
            let dx = (rng.random_range(-1.0f32..=1.0) * max_offset).round() as isize;
            let rr = (r as isize + dy).clamp(0, h as isize - 1) as usize;
            let cc = (c as isize + dx).clamp(0, w as isize - 1) as usize;
            data.extend_from_slice(&img.pixel(rr, cc));
        }
    }
    img.with_data(data)
}

fn patch_jitter(img: &Image, max_offset: f32, block: usize, rng: &mut ChaCha8Rng) -> Image {
    let (h, w) = img.dims();
    let mut data = img.data().to_vec();
    for br in (0..h).step_by(block) {
        for bc in (0..w).step_by(block) {
            let dy = (rng.random_range(-1.0f32..=1.0) * max_offset).round() as isize;
            let dx = (rng.random_range(-1.0f32..=1.0) * max_offset).round() as isize;
            for r in br..(br + block).min(h) {
                for c in bc..(bc + block).min(w) {
                    let rr = (r as isize + dy).clamp(0, h as isize - 1) as usize;
                    let cc = (c as isize + dx).clamp(0, w as isize - 1) as usize;
                    let i = (r * w + c) * 3;
                    data[i..i + 3].copy_from_slice(&img.pixel(rr, cc));
                }
            }
        }
    }
    img.with_data(data)
}

fn color_diffuse(img: &Image, sigma: f32) -> Image {
    let (h, w) = img.dims();
    let lab: Vec<[f32; 3]> = img.pixels().map(srgb_to_lab).collect();
    let ab: Vec<f32> = lab.iter().flat_map(|p| [p[1], p[2]]).collect();
    let blurred = convolve_separable(&ab, h, w, 2, &gaussian_kernel(sigma));
    let data = lab
        .iter()
        .enumerate()
        .flat_map(|(i, p)| lab_to_srgb([p[0], blurred[2 * i], blurred[2 * i + 1]]))
        .collect();
    img.with_data(data)
}

fn color_shift(img: &Image, offset: isize) -> Image {
    let (h, w) = img.dims();
    let mut data = img.data().to_vec();
    for r in 0..h {
        for c in 0..w {
            let left = (c as isize - offset).clamp(0, w as isize - 1) as usize;
            let right = (c as isize + offset).clamp(0, w as isize - 1) as usize;
            let i = (r * w + c) * 3;
            data[i] = img.pixel(r, left)[0];
            data[i + 2] = img.pixel(r, right)[2];
        }
    }
    img.with_data(data)
}

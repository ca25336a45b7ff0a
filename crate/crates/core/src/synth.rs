//! Procedural test imagery: smooth colorful scenes for toy training and
//! tinted variants for appearance-transfer probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::pixelcore::{hsv_to_rgb, Colorspace, Image};

/// Edge ramp widths in pixels. Scenes stay mostly low-frequency, which a
/// small autoencoder can learn to reproduce in a few thousand steps.
const EDGE_SOFTNESS: std::ops::Range<f32> = 2.0..8.0;

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    hsv_to_rgb([rng.random::<f32>(), rng.random_range(0.35..0.95), rng.random_range(0.35..0.9)])
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

enum Shape {
    Disk { cy: f32, cx: f32, r: f32, soft: f32 },
    Rect { y0: f32, x0: f32, y1: f32, x1: f32, soft: f32 },
    Stripes { freq: f32, angle: f32, phase: f32 },
}

impl Shape {
    /// Coverage in `[0, 1]`, ramping across an edge `soft` pixels wide.
    fn coverage(&self, y: f32, x: f32) -> f32 {
        let edge = |d: f32, soft: f32| (0.5 - d / soft).clamp(0.0, 1.0);
        match *self {
            Shape::Disk { cy, cx, r, soft } => edge(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r, soft),
            Shape::Rect { y0, x0, y1, x1, soft } => {
                let d = (y0 - y).max(y - y1).max(x0 - x).max(x - x1);
                edge(d, soft)
            }
            Shape::Stripes { freq, angle, phase } => {
                let u = x * angle.cos() + y * angle.sin();
                0.5 + 0.5 * (u * freq + phase).sin()
            }
        }
    }
}

/// A `height × width` sRGB scene: a two-color gradient background overlaid
/// with a handful of disks, rectangles and soft stripe fields.
pub fn colorful_image(height: usize, width: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f32, width as f32);
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());
    let n_shapes = rng.random_range(3..7);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let shape = match rng.random_range(0..5) {
            0 | 1 => Shape::Disk {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(0.08..0.3) * h.min(w),
                soft: rng.random_range(EDGE_SOFTNESS),
            },
            2 | 3 => {
                let (y0, x0) = (rng.random_range(0.0..h * 0.8), rng.random_range(0.0..w * 0.8));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.1..0.5) * h,
                    x1: x0 + rng.random_range(0.1..0.5) * w,
                    soft: rng.random_range(EDGE_SOFTNESS),
                }
            }
            _ => Shape::Stripes {
                freq: rng.random_range(0.05..0.2),
                angle: rng.random_range(0.0..std::f32::consts::PI),
                phase: rng.random_range(0.0..std::f32::consts::TAU),
            },
        };
        let alpha = match shape {
            Shape::Stripes { .. } => rng.random_range(0.2..0.5),
            _ => rng.random_range(0.6..1.0),
        };
        shapes.push((shape, random_color(&mut rng), alpha));
    }
    Image::from_fn(height, width, Colorspace::Srgb, |r, c| {
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        let t = (((x / w - 0.5) * ga + (y / h - 0.5) * gb) + 0.71) / 1.42;
        let mut p = mix(c0, c1, t.clamp(0.0, 1.0));
        for (shape, color, alpha) in &shapes {
            p = mix(p, *color, alpha * shape.coverage(y, x));
        }
        p
    })
}

/// A corpus of `count` scenes with seeds derived from `seed`.
pub fn colorful_corpus(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count)
        .map(|i| colorful_image(height, width, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

/// Multiplies each channel by `gains` (then clips), giving the image an
/// overall color cast.
pub fn color_cast(img: &Image, gains: [f32; 3]) -> Image {
    img.map_pixels(|p| [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
}

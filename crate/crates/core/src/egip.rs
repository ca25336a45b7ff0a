//! Example-guided image processing: transfer the edit shown by an
//! (example source, example target) pair onto a new input.
//!
//! Large inputs are cut into `patch_size` tiles with 50% overlap, each tile
//! is decoded on its own, and the tiles are blended with tent weights.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{images_to_tensor, tensor_to_images, DualHeadUNet};
use crate::pixelcore::{rgb_to_hsv, BitOrigin, Colorspace, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// `A(x) + A(example_tgt) − A(example_src)`.
    Mixing,
    /// `A(example_tgt)` alone.
    Replacement,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mixing => "MIXING",
            Mode::Replacement => "REPLACEMENT",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MIXING" | "MIX" => Ok(Mode::Mixing),
            "REPLACEMENT" | "REPLACE" => Ok(Mode::Replacement),
            other => Err(Error::Config(format!("unknown mode `{other}`; expected MIXING or REPLACEMENT"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EgipRequest {
    pub example_src: Image,
    pub example_tgt: Image,
    pub input_src: Image,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EgipOptions {
    /// Tiles decoded concurrently. 1 runs on the calling thread.
    pub workers: usize,
}

impl Default for EgipOptions {
    fn default() -> Self {
        EgipOptions { workers: 1 }
    }
}

/// Tile origins along both axes of a (possibly padded) canvas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub size: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// Canvas size after reflect padding up to at least one tile.
    pub padded: (usize, usize),
}

fn axis_origins(len: usize, size: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let stride = (size / 2).max(1);
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + size < len).collect();
    out.push(len - size);
    out.dedup();
    out
}

impl TileGrid {
    pub fn new(height: usize, width: usize, size: usize) -> Self {
        let padded = (height.max(size), width.max(size));
        TileGrid {
            size,
            rows: axis_origins(padded.0, size),
            cols: axis_origins(padded.1, size),
            padded,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .flat_map(|&r| self.cols.iter().map(move |&c| (r, c)))
            .collect()
    }

    /// Pixel positions where one tile ends or another begins, excluding the
    /// canvas edges. Returned per axis, clipped to `(height, width)`.
    pub fn boundaries(&self, height: usize, width: usize) -> (Vec<usize>, Vec<usize>) {
        let edges = |origins: &[usize], len: usize| {
            let mut v: Vec<usize> = origins
                .iter()
                .flat_map(|&o| [o, o + self.size])
                .filter(|&b| b > 0 && b < len)
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        (edges(&self.rows, height), edges(&self.cols, width))
    }
}

/// What the decoder saw, per tile, so callers can check that the two modes
/// share the content path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EgipTrace {
    /// `(Σ v, Σ v²)` over every content map of the tile.
    pub content_sums: Vec<(f64, f64)>,
    /// Appearance vector handed to the decoder.
    pub decoder_appearance: Vec<Vec<f32>>,
}

fn tiles(img: &Image, grid: &TileGrid) -> Result<Vec<Image>> {
    let padded = img.pad_reflect_to(grid.padded.0, grid.padded.1)?;
    grid.origins()
        .into_iter()
        .map(|(r, c)| padded.crop(r, c, grid.size, grid.size))
        .collect()
}

fn appearance_of(model: &DualHeadUNet, tile: &Image) -> Result<Tensor> {
    model.appearance_tensor(&images_to_tensor(&[tile], model.dtype())?)
}

fn tile_appearances(model: &DualHeadUNet, img: &Image, grid: &TileGrid, workers: usize) -> Result<Vec<Tensor>> {
    let ts = tiles(img, grid)?;
    map_tiles(&ts, workers, |t| appearance_of(model, t))
}

fn mean_appearance(per_tile: &[Tensor]) -> Result<Tensor> {
    let stacked = Tensor::cat(per_tile, 0)?;
    Ok(stacked.mean_keepdim(0)?)
}

fn map_tiles<T: Send>(
    items: &[Image],
    workers: usize,
    f: impl Fn(&Image) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Per-tile source of the decoder's appearance vector.
enum Guide {
    /// Added to the tile's own appearance. One entry, or one per tile.
    Delta(Vec<Tensor>),
    /// Used as is. One entry, or one per tile.
    Replace(Vec<Tensor>),
}

impl Guide {
    fn pick(v: &[Tensor], k: usize) -> &Tensor {
        if v.len() == 1 {
            &v[0]
        } else {
            &v[k]
        }
    }
}

fn tent(size: usize) -> Vec<f64> {
    (0..size).map(|i| (i + 1).min(size - i) as f64).collect()
}

fn sums(maps: &[Tensor]) -> Result<(f64, f64)> {
    let mut s = 0.0;
    let mut s2 = 0.0;
    for m in maps {
        let m = m.to_dtype(DType::F64)?;
        s += m.sum_all()?.to_scalar::<f64>()?;
        s2 += m.sqr()?.sum_all()?.to_scalar::<f64>()?;
    }
    Ok((s, s2))
}

fn run_tiled(
    model: &DualHeadUNet,
    input: &Image,
    guide: &Guide,
    grid: &TileGrid,
    workers: usize,
) -> Result<(Image, EgipTrace)> {
    let ts = tiles(input, grid)?;
    let indexed: Vec<(usize, &Image)> = ts.iter().enumerate().collect();
    let decode_one = |&(k, tile): &(usize, &Image)| -> Result<(Image, (f64, f64), Vec<f32>)> {
        let x = images_to_tensor(&[tile], model.dtype())?;
        let maps = model.content_maps(&x)?;
        let a = match guide {
            Guide::Delta(d) => (model.appearance_tensor(&x)? + Guide::pick(d, k))?,
            Guide::Replace(r) => Guide::pick(r, k).clone(),
        };
        let y = model.decode_tensor(&maps, &a, (grid.size, grid.size))?;
        let img = tensor_to_images(&y, input.colorspace())?.remove(0);
        let a_vec: Vec<f32> = a.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        Ok((img, sums(&maps)?, a_vec))
    };
    let decoded: Vec<_> = if workers <= 1 {
        indexed.iter().map(decode_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| indexed.par_iter().map(decode_one).collect::<Result<_>>())?
    };

    let (h, w) = input.dims();
    if decoded.len() == 1 && grid.padded == (h, w) {
        let (img, s, a) = decoded.into_iter().next().expect("one tile");
        let trace = EgipTrace {
            content_sums: vec![s],
            decoder_appearance: vec![a],
        };
        return Ok((img.with_bit_origin(BitOrigin::EightBit), trace));
    }

    let (ph, pw) = grid.padded;
    let weights = tent(grid.size);
    let mut acc = vec![0.0f64; ph * pw * 3];
    let mut norm = vec![0.0f64; ph * pw];
    let mut trace = EgipTrace::default();
    for ((r0, c0), (img, s, a)) in grid.origins().into_iter().zip(decoded) {
        let data = img.data();
        for i in 0..grid.size {
            for j in 0..grid.size {
                let wgt = weights[i] * weights[j];
                let p = (r0 + i) * pw + c0 + j;
                let q = (i * grid.size + j) * 3;
                for ch in 0..3 {
                    acc[p * 3 + ch] += wgt * data[q + ch] as f64;
                }
                norm[p] += wgt;
            }
        }
        trace.content_sums.push(s);
        trace.decoder_appearance.push(a);
    }
    let out = Image::from_fn(h, w, input.colorspace(), |r, c| {
        let p = r * pw + c;
        [0, 1, 2].map(|ch| (acc[p * 3 + ch] / norm[p]) as f32)
    })?;
    Ok((out.with_bit_origin(BitOrigin::EightBit), trace))
}

fn check_request(req: &EgipRequest) -> Result<()> {
    if req.example_src.dims() != req.example_tgt.dims() {
        return Err(Error::Shape(format!(
            "example pair sizes differ: {:?} vs {:?}",
            req.example_src.dims(),
            req.example_tgt.dims()
        )));
    }
    Ok(())
}

/// Applies the example edit and also returns what the decoder consumed.
pub fn egip_apply_traced(
    req: &EgipRequest,
    model: &DualHeadUNet,
    opts: &EgipOptions,
) -> Result<(Image, EgipTrace)> {
    check_request(req)?;
    let p = model.config().patch_size;
    let (h, w) = req.input_src.dims();
    let grid = TileGrid::new(h, w, p);
    // Co-located example tiles when the pair matches the input, otherwise
    // one vector averaged over the example's own tiles.
    let (ex_grid, per_tile) = if req.example_src.dims() == (h, w) {
        (grid.clone(), true)
    } else {
        let (eh, ew) = req.example_src.dims();
        (TileGrid::new(eh, ew, p), false)
    };
    let workers = opts.workers.max(1);
    let tgt = tile_appearances(model, &req.example_tgt, &ex_grid, workers)?;
    let guide = match req.mode {
        Mode::Mixing => {
            let src = tile_appearances(model, &req.example_src, &ex_grid, workers)?;
            let deltas = tgt
                .iter()
                .zip(&src)
                .map(|(t, s)| Ok((t - s)?))
                .collect::<Result<Vec<_>>>()?;
            Guide::Delta(if per_tile { deltas } else { vec![mean_appearance(&deltas)?] })
        }
        Mode::Replacement => Guide::Replace(if per_tile { tgt } else { vec![mean_appearance(&tgt)?] }),
    };
    run_tiled(model, &req.input_src, &guide, &grid, workers)
}

pub fn egip_apply(req: &EgipRequest, model: &DualHeadUNet, opts: &EgipOptions) -> Result<Image> {
    Ok(egip_apply_traced(req, model, opts)?.0)
}

/// Encode and decode `img` through the tiled path with its own appearance.
pub fn self_reconstruct(model: &DualHeadUNet, img: &Image, opts: &EgipOptions) -> Result<Image> {
    let p = model.config().patch_size;
    let grid = TileGrid::new(img.height(), img.width(), p);
    let zero = Tensor::zeros((1, model.config().appearance_len()), model.dtype(), &candle_core::Device::Cpu)?;
    Ok(run_tiled(model, img, &Guide::Delta(vec![zero]), &grid, opts.workers.max(1))?.0)
}

/// Example-guided tone mapping. The HDR frames stay PQ code values, which is
/// how the HDR bank presents them during training; the output is sRGB.
pub fn egtm(
    hdr_input: &Image,
    example_hdr: &Image,
    example_sdr: &Image,
    model: &DualHeadUNet,
    opts: &EgipOptions,
) -> Result<Image> {
    for img in [hdr_input, example_hdr] {
        if img.colorspace() != Colorspace::PqBt2100 {
            return Err(Error::ColorspaceMismatch {
                expected: Colorspace::PqBt2100,
                actual: img.colorspace(),
            });
        }
    }
    if example_sdr.colorspace() != Colorspace::Srgb {
        return Err(Error::ColorspaceMismatch {
            expected: Colorspace::Srgb,
            actual: example_sdr.colorspace(),
        });
    }
    let req = EgipRequest {
        example_src: example_hdr.clone(),
        example_tgt: example_sdr.clone().with_colorspace(Colorspace::PqBt2100),
        input_src: hdr_input.clone(),
        mode: Mode::Mixing,
    };
    Ok(egip_apply(&req, model, opts)?.with_colorspace(Colorspace::Srgb))
}

/// Discontinuity across tile boundaries against the same statistic on
/// ordinary pixel lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamReport {
    /// Largest per-line mean absolute step across a tile boundary.
    pub seam_max: f64,
    /// Median per-line mean absolute step away from boundaries.
    pub interior_median: f64,
}

impl SeamReport {
    pub fn ratio(&self) -> f64 {
        if self.interior_median > 0.0 {
            self.seam_max / self.interior_median
        } else if self.seam_max > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Per-line statistic: the mean over the line of the largest channel step
/// between pixel `b - 1` and `b`.
pub fn seam_metric(img: &Image, grid: &TileGrid) -> SeamReport {
    let (h, w) = img.dims();
    let (row_b, col_b) = grid.boundaries(h, w);
    let step = |a: [f32; 3], b: [f32; 3]| (0..3).map(|k| (a[k] - b[k]).abs() as f64).fold(0.0, f64::max);
    let row_line = |b: usize| (0..w).map(|c| step(img.pixel(b - 1, c), img.pixel(b, c))).sum::<f64>() / w as f64;
    let col_line = |b: usize| (0..h).map(|r| step(img.pixel(r, b - 1), img.pixel(r, b))).sum::<f64>() / h as f64;
    let seam_max = row_b
        .iter()
        .map(|&b| row_line(b))
        .chain(col_b.iter().map(|&b| col_line(b)))
        .fold(0.0, f64::max);
    let mut interior: Vec<f64> = (1..h)
        .filter(|b| !row_b.contains(b))
        .map(row_line)
        .chain((1..w).filter(|b| !col_b.contains(b)).map(col_line))
        .collect();
    interior.sort_by(f64::total_cmp);
    let interior_median = match interior.len() {
        0 => 0.0,
        n if n % 2 == 1 => interior[n / 2],
        n => 0.5 * (interior[n / 2 - 1] + interior[n / 2]),
    };
    SeamReport {
        seam_max,
        interior_median,
    }
}

/// Mean circular hue distance in degrees over pixels saturated in both
/// images (HSV saturation at least `min_sat`). `None` when no pixel qualifies.
pub fn hue_shift(a: &Image, b: &Image, min_sat: f32) -> Result<Option<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("hue shift between {:?} and {:?}", a.dims(), b.dims())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, q) in a.pixels().zip(b.pixels()) {
        let (hp, hq) = (rgb_to_hsv(p), rgb_to_hsv(q));
        if hp[1] < min_sat || hq[1] < min_sat {
            continue;
        }
        let d = (hp[0] - hq[0]).abs() as f64;
        total += d.min(1.0 - d) * 360.0;
        n += 1;
    }
    Ok((n > 0).then(|| total / n as f64))
}

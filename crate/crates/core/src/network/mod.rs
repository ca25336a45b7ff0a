//! Dual-head U-Net: an instance-normalized content encoder, an un-normalized
//! appearance encoder pooled per stage, and a decoder that re-injects
//! appearance through product channel attention.

mod layers;
mod params;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use layers::{
    channel_attention, conv2d_replicate, instance_norm, max_pool_3x3_s2, upsample_nearest, Conv, InstanceNorm, Linear, IN_EPS,
};
pub use params::{LayerInfo, LayerKind, ParamStore};

use crate::error::{Error, Result};
use crate::pixelcore::{BitOrigin, Colorspace, Image};
use params::ParamBuilder;

/// Residual block flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand by 4.
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub width_multiplier: f64,
    pub block_depths: [usize; 4],
    pub base_channels: usize,
    pub patch_size: usize,
    pub toy_preset: bool,
    pub block: BlockKind,
    /// Learned per-channel scale/shift after each content-encoder IN.
    pub affine_in: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::paper()
    }
}

impl NetConfig {
    /// ResNet-50 at half width: bottleneck blocks, depths 3-4-6-3.
    pub fn paper() -> Self {
        NetConfig {
            width_multiplier: 0.5,
            block_depths: [3, 4, 6, 3],
            base_channels: 64,
            patch_size: 128,
            toy_preset: false,
            block: BlockKind::Bottleneck,
            affine_in: true,
        }
    }

    /// Desk-scale network: width 0.125, one basic block per stage.
    pub fn toy() -> Self {
        NetConfig {
            width_multiplier: 0.125,
            block_depths: [1, 1, 1, 1],
            base_channels: 64,
            patch_size: 64,
            toy_preset: true,
            block: BlockKind::Basic,
            affine_in: true,
        }
    }

    fn raw_channels(&self, b: usize) -> f64 {
        self.base_channels as f64 * self.width_multiplier * self.block.expansion() as f64 * (1u64 << b) as f64
    }

    /// Per-stage output channels `C_b`.
    pub fn channels(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|b| self.raw_channels(b).round() as usize)
    }

    /// Stem width (the stage-0 input width before expansion).
    pub fn stem_channels(&self) -> usize {
        (self.base_channels as f64 * self.width_multiplier).round() as usize
    }

    /// Length of the appearance vector, `Σ C_b`.
    pub fn appearance_len(&self) -> usize {
        self.channels().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0) || !self.width_multiplier.is_finite() {
            return Err(Error::Config(format!("width multiplier {} must be positive", self.width_multiplier)));
        }
        for b in 0..4 {
            let c = self.raw_channels(b);
            if c.fract() != 0.0 || c < 4.0 {
                return Err(Error::Config(format!("stage {b} channel count {c} is not an integer >= 4")));
            }
        }
        let stem = self.base_channels as f64 * self.width_multiplier;
        if stem.fract() != 0.0 || stem < 1.0 {
            return Err(Error::Config(format!("stem width {stem} is not a positive integer")));
        }
        if self.block_depths.contains(&0) {
            return Err(Error::Config("block depths must be >= 1".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(32) {
            return Err(Error::Config(format!("patch size {} is not a multiple of 32", self.patch_size)));
        }
        Ok(())
    }
}

/// Content maps `c_b`, shapes `N × C_b × H/2^(b+2) × W/2^(b+2)`, plus the
/// input size they were computed from.
#[derive(Debug, Clone)]
pub struct ContentFeatures {
    pub maps: Vec<Tensor>,
    pub height: usize,
    pub width: usize,
    pub colorspace: Colorspace,
}

/// Concatenated per-stage pooled appearance activations.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceVector {
    pub vec: Vec<f32>,
}

impl AppearanceVector {
    pub fn len(&self) -> usize {
        self.vec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vec.is_empty()
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.vec, (1, self.vec.len()), &Device::Cpu)?.to_dtype(dtype)?)
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let vec: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("appearance vector has non-finite entries".into()));
        }
        Ok(AppearanceVector { vec })
    }
}

/// Packs images (all the same size) into an `N × 3 × H × W` tensor.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = first.dims();
    let mut parts = Vec::with_capacity(images.len());
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes sizes {h}x{w} and {}x{}",
                img.height(), img.width()
            )));
        }
        let t = Tensor::from_slice(img.data(), (h, w, 3), &Device::Cpu)?.permute((2, 0, 1))?;
        parts.push(t);
    }
    Ok(Tensor::stack(&parts, 0)?.to_dtype(dtype)?.contiguous()?)
}

/// Inverse of [`images_to_tensor`]; values are clipped into `[0, 1]`.
pub fn tensor_to_images(t: &Tensor, colorspace: Colorspace) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let hwc = t.to_dtype(DType::F32)?.permute((0, 2, 3, 1))?.contiguous()?;
    (0..n)
        .map(|i| {
            let data: Vec<f32> = hwc.get(i)?.flatten_all()?.to_vec1()?;
            Image::from_vec(h, w, data, colorspace)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<Conv>,
    norms: Vec<InstanceNorm>,
    skip: Option<(Conv, Option<InstanceNorm>)>,
}

impl Block {
    /// `normalized` selects content-encoder style (IN after every conv, no
    /// biases) versus appearance/decoder style (biases, no normalization).
    #[allow(clippy::too_many_arguments)]
    fn new(
        pb: &mut ParamBuilder,
        path: &str,
        kind: BlockKind,
        c_in: usize,
        c_out: usize,
        stride: usize,
        normalized: bool,
        affine: bool,
        last_gain: f64,
    ) -> Result<Self> {
        let bias = !normalized;
        let mut convs = Vec::new();
        match kind {
            BlockKind::Basic => {
                convs.push(Conv::new(pb, &format!("{path}.conv1"), c_in, c_out, 3, stride, bias, 1.0)?);
                convs.push(Conv::new(pb, &format!("{path}.conv2"), c_out, c_out, 3, 1, bias, last_gain)?);
            }
            BlockKind::Bottleneck => {
                let mid = c_out / kind.expansion();
                convs.push(Conv::new(pb, &format!("{path}.conv1"), c_in, mid, 1, 1, bias, 1.0)?);
                convs.push(Conv::new(pb, &format!("{path}.conv2"), mid, mid, 3, stride, bias, 1.0)?);
                convs.push(Conv::new(pb, &format!("{path}.conv3"), mid, c_out, 1, 1, bias, last_gain)?);
            }
        }
        let mut norms = Vec::new();
        if normalized {
            for (i, conv) in convs.iter().enumerate() {
                let c = conv.out_channels();
                norms.push(InstanceNorm::new(pb, &format!("{path}.in{}", i + 1), c, affine)?);
            }
        }
        let skip = if c_in != c_out || stride != 1 {
            let conv = Conv::new(pb, &format!("{path}.skip"), c_in, c_out, 1, stride, bias, 1.0)?;
            let norm = if normalized {
                Some(InstanceNorm::new(pb, &format!("{path}.skip_in"), c_out, affine)?)
            } else {
                None
            };
            Some((conv, norm))
        } else {
            None
        };
        Ok(Block { convs, norms, skip })
    }

    /// Returns `skip + body` before the output activation.
    fn forward_pre(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if let Some(norm) = self.norms.get(i) {
                h = norm.forward(&h)?;
            }
            if i < last {
                h = h.relu()?;
            }
        }
        let s = match &self.skip {
            Some((conv, norm)) => {
                let s = conv.forward(x)?;
                match norm {
                    Some(n) => n.forward(&s)?,
                    None => s,
                }
            }
            None => x.clone(),
        };
        Ok((h + s)?)
    }
}

#[derive(Debug, Clone)]
struct ContentEncoder {
    stem: Conv,
    stem_norm: InstanceNorm,
    stages: Vec<Vec<Block>>,
    out_norms: Vec<InstanceNorm>,
}

#[derive(Debug, Clone)]
struct AppearanceEncoder {
    stem: Conv,
    stages: Vec<Vec<Block>>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up_conv: Option<Conv>,
    fuse: Option<Conv>,
    proj: Linear,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Decoder {
    stages: Vec<DecoderStage>,
    head1: Conv,
    head2: Conv,
    out: Conv,
}

/// The full model. Parameters live in one [`ParamStore`] whose paths start
/// with `content.`, `appearance.` or `decoder.`.
#[derive(Debug)]
pub struct DualHeadUNet {
    config: NetConfig,
    dtype: DType,
    params: ParamStore,
    content: ContentEncoder,
    appearance: AppearanceEncoder,
    decoder: Decoder,
}

/// Gain on the last convolution of each un-normalized residual body, which
/// keeps activations from growing with depth at initialization.
const RESIDUAL_GAIN: f64 = 0.5;
const PROJ_STD: f64 = 0.02;

fn build_stages(
    pb: &mut ParamBuilder,
    prefix: &str,
    cfg: &NetConfig,
    normalized: bool,
) -> Result<Vec<Vec<Block>>> {
    let chans = cfg.channels();
    let mut c_in = cfg.stem_channels();
    let mut stages = Vec::new();
    for (b, &c_out) in chans.iter().enumerate() {
        let mut blocks = Vec::new();
        for i in 0..cfg.block_depths[b] {
            let stride = if b > 0 && i == 0 { 2 } else { 1 };
            let gain = if normalized { 1.0 } else { RESIDUAL_GAIN };
            blocks.push(Block::new(
                pb,
                &format!("{prefix}.stage{b}.block{i}"),
                cfg.block,
                c_in,
                c_out,
                stride,
                normalized,
                cfg.affine_in,
                gain,
            )?);
            c_in = c_out;
        }
        stages.push(blocks);
    }
    Ok(stages)
}

impl DualHeadUNet {
    /// Builds a model in 32-bit precision with weights drawn from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    /// Same as [`DualHeadUNet::new`] at an explicit precision (`F32` or `F64`).
    pub fn with_dtype(config: NetConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(Error::Config(format!("unsupported dtype {dtype:?}")));
        }
        let mut pb = ParamBuilder::new(seed, dtype);
        let chans = config.channels();
        let stem_c = config.stem_channels();
        let total = config.appearance_len();

        let content = ContentEncoder {
            stem: Conv::new(&mut pb, "content.stem", 3, stem_c, 7, 2, false, 1.0)?,
            stem_norm: InstanceNorm::new(&mut pb, "content.stem_in", stem_c, config.affine_in)?,
            stages: build_stages(&mut pb, "content", &config, true)?,
            out_norms: (0..4)
                .map(|b| InstanceNorm::new(&mut pb, &format!("content.stage{b}.out_in"), chans[b], false))
                .collect::<Result<_>>()?,
        };
        pb.store.register_layer("content.stem_pool", LayerKind::MaxPool);

        let appearance = AppearanceEncoder {
            stem: Conv::new(&mut pb, "appearance.stem", 3, stem_c, 7, 2, true, 1.0)?,
            stages: build_stages(&mut pb, "appearance", &config, false)?,
        };
        pb.store.register_layer("appearance.stem_pool", LayerKind::MaxPool);

        let mut stages = Vec::new();
        for b in (0..4).rev() {
            let path = format!("decoder.stage{b}");
            let (up_conv, fuse) = if b == 3 {
                (None, None)
            } else {
                (
                    Some(Conv::new(&mut pb, &format!("{path}.up"), chans[b + 1], chans[b], 3, 1, true, 1.0)?),
                    Some(Conv::new(&mut pb, &format!("{path}.fuse"), 2 * chans[b], chans[b], 1, 1, true, 1.0)?),
                )
            };
            let proj = Linear::new(&mut pb, &format!("{path}.proj"), total, chans[b], PROJ_STD, 1.0)?;
            pb.store.register_layer(&format!("{path}.attention"), LayerKind::ChannelAttention);
            let blocks = (0..config.block_depths[b])
                .map(|i| {
                    Block::new(
                        &mut pb,
                        &format!("{path}.block{i}"),
                        BlockKind::Basic,
                        chans[b],
                        chans[b],
                        1,
                        false,
                        false,
                        RESIDUAL_GAIN,
                    )
                })
                .collect::<Result<_>>()?;
            stages.push(DecoderStage {
                up_conv,
                fuse,
                proj,
                blocks,
            });
        }
        let decoder = Decoder {
            stages,
            head1: Conv::new(&mut pb, "decoder.head1", chans[0], stem_c, 3, 1, true, 1.0)?,
            head2: Conv::new(&mut pb, "decoder.head2", stem_c, stem_c, 3, 1, true, 1.0)?,
            out: Conv::new(&mut pb, "decoder.out", stem_c, 3, 3, 1, true, 0.1)?.with_bias_init(0.5)?,
        };

        Ok(DualHeadUNet {
            config,
            dtype,
            params: pb.store,
            content,
            appearance,
            decoder,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Layer counts per (top-level group, kind), for architecture audits.
    pub fn census(&self) -> BTreeMap<(String, String), usize> {
        let mut out = BTreeMap::new();
        for l in self.params.layers() {
            let key = (ParamStore::group_of(&l.path).to_string(), format!("{:?}", l.kind));
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    /// Content maps for an `N × 3 × H × W` batch. `H` and `W` need not be
    /// multiples of 32 at this level; spatial sizes round up at each stride.
    pub fn content_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let enc = &self.content;
        let mut h = enc.stem_norm.forward(&enc.stem.forward(x)?)?.relu()?;
        h = max_pool_3x3_s2(&h)?;
        let mut maps = Vec::with_capacity(4);
        for (stage, out_norm) in enc.stages.iter().zip(&enc.out_norms) {
            let last = stage.len() - 1;
            for (i, block) in stage.iter().enumerate() {
                let pre = block.forward_pre(&h)?;
                if i == last {
                    let c = out_norm.forward(&pre)?;
                    h = c.relu()?;
                    maps.push(c);
                } else {
                    h = pre.relu()?;
                }
            }
        }
        Ok(maps)
    }

    /// Per-stage appearance activations `h_b` (after the stage's last block).
    pub fn appearance_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let enc = &self.appearance;
        let mut h = enc.stem.forward(x)?.relu()?;
        h = max_pool_3x3_s2(&h)?;
        let mut maps = Vec::with_capacity(4);
        for stage in &enc.stages {
            for block in stage {
                h = block.forward_pre(&h)?.relu()?;
            }
            maps.push(h.clone());
        }
        Ok(maps)
    }

    /// Appearance vectors, `N × Σ C_b`.
    pub fn appearance_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self
            .appearance_maps(x)?
            .iter()
            .map(|m| m.mean((2, 3)))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }

    /// Decodes content maps and appearance vectors into an `N × 3 × H × W`
    /// batch with values in `[0, 1]`.
    pub fn decode_tensor(&self, maps: &[Tensor], a: &Tensor, out_hw: (usize, usize)) -> Result<Tensor> {
        let chans = self.config.channels();
        if maps.len() != 4 {
            return Err(Error::Shape(format!("expected 4 content maps, got {}", maps.len())));
        }
        for (b, m) in maps.iter().enumerate() {
            let (_, c, _, _) = m.dims4()?;
            if c != chans[b] {
                return Err(Error::Config(format!(
                    "content map {b} has {c} channels, model expects {}",
                    chans[b]
                )));
            }
        }
        let (_, alen) = a.dims2()?;
        if alen != self.config.appearance_len() {
            return Err(Error::Config(format!(
                "appearance vector has length {alen}, model expects {}",
                self.config.appearance_len()
            )));
        }
        let mut h: Option<Tensor> = None;
        for (stage, b) in self.decoder.stages.iter().zip((0..4).rev()) {
            let skip = &maps[b];
            let x = match (&h, &stage.up_conv, &stage.fuse) {
                (Some(prev), Some(up), Some(fuse)) => {
                    let (_, _, sh, sw) = skip.dims4()?;
                    let u = up.forward(&upsample_nearest(prev, sh, sw)?)?.relu()?;
                    fuse.forward(&Tensor::cat(&[&u, skip], 1)?)?
                }
                _ => skip.clone(),
            };
            let att = stage.proj.forward(a)?;
            let mut y = channel_attention(&x, &att)?.relu()?;
            for block in &stage.blocks {
                y = block.forward_pre(&y)?.relu()?;
            }
            h = Some(y);
        }
        let h = h.expect("four decoder stages");
        let (oh, ow) = out_hw;
        let (half_h, half_w) = (oh.div_ceil(2), ow.div_ceil(2));
        let h = self.decoder.head1.forward(&upsample_nearest(&h, half_h, half_w)?)?.relu()?;
        let h = self.decoder.head2.forward(&upsample_nearest(&h, oh, ow)?)?.relu()?;
        Ok(self.decoder.out.forward(&h)?.clamp(0.0, 1.0)?)
    }

    /// Encode both heads and decode, for an `N × 3 × H × W` batch.
    pub fn reconstruct_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let maps = self.content_maps(x)?;
        let a = self.appearance_tensor(x)?;
        self.decode_tensor(&maps, &a, (h, w))
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let (h, w) = img.dims();
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Size(format!("image is {h}x{w}; both sides must be multiples of 32")));
        }
        Ok(())
    }

    pub fn encode_content(&self, img: &Image) -> Result<ContentFeatures> {
        self.check_image(img)?;
        let x = images_to_tensor(&[img], self.dtype)?;
        Ok(ContentFeatures {
            maps: self.content_maps(&x)?,
            height: img.height(),
            width: img.width(),
            colorspace: img.colorspace(),
        })
    }

    pub fn encode_appearance(&self, img: &Image) -> Result<AppearanceVector> {
        self.check_image(img)?;
        let x = images_to_tensor(&[img], self.dtype)?;
        AppearanceVector::from_tensor(&self.appearance_tensor(&x)?)
    }

    pub fn decode(&self, c: &ContentFeatures, a: &AppearanceVector) -> Result<Image> {
        let a = a.to_tensor(self.dtype)?;
        let y = self.decode_tensor(&c.maps, &a, (c.height, c.width))?;
        let mut out = tensor_to_images(&y, c.colorspace)?;
        Ok(out.remove(0).with_bit_origin(BitOrigin::EightBit))
    }
}

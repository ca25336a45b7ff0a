//! Multi-scale mean/std pooled appearance features and their on-disk cache.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use candle_core::DType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{images_to_tensor, DualHeadUNet, NetConfig};
use crate::pixelcore::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scale {
    Full,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pool {
    Mean,
    Std,
}

/// Segment order inside a feature vector.
pub const SEGMENTS: [(Scale, Pool); 4] = [
    (Scale::Full, Pool::Mean),
    (Scale::Full, Pool::Std),
    (Scale::Half, Pool::Mean),
    (Scale::Half, Pool::Std),
];

/// Feature subsets compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    SingleScaleMean,
    SingleScaleMeanStd,
    MultiScaleMean,
    MultiScaleMeanStd,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SingleScaleMean,
        Variant::SingleScaleMeanStd,
        Variant::MultiScaleMean,
        Variant::MultiScaleMeanStd,
    ];

    pub fn segments(self) -> &'static [(Scale, Pool)] {
        match self {
            Variant::SingleScaleMean => &[(Scale::Full, Pool::Mean)],
            Variant::SingleScaleMeanStd => &[(Scale::Full, Pool::Mean), (Scale::Full, Pool::Std)],
            Variant::MultiScaleMean => &[(Scale::Full, Pool::Mean), (Scale::Half, Pool::Mean)],
            Variant::MultiScaleMeanStd => &SEGMENTS,
        }
    }

    pub fn scale_label(self) -> &'static str {
        match self {
            Variant::SingleScaleMean | Variant::SingleScaleMeanStd => "Single-Scale",
            _ => "Multi-Scale",
        }
    }

    pub fn pool_label(self) -> &'static str {
        match self {
            Variant::SingleScaleMean | Variant::MultiScaleMean => "Mean",
            _ => "Mean+Std",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.scale_label(), self.pool_label())
    }
}

/// `D = 2 scales × 2 pools × Σ C_b`.
pub fn feature_len(net: &NetConfig) -> usize {
    4 * net.appearance_len()
}

/// One image's feature vector: full-scale means, full-scale stds,
/// half-scale means, half-scale stds, each with blocks in depth order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityFeatures {
    pub z: Vec<f32>,
    pub block_len: usize,
}

impl QualityFeatures {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn segment(&self, scale: Scale, pool: Pool) -> &[f32] {
        let i = SEGMENTS.iter().position(|&s| s == (scale, pool)).expect("every segment is listed");
        &self.z[i * self.block_len..(i + 1) * self.block_len]
    }

    pub fn select(&self, variant: Variant) -> Vec<f32> {
        variant
            .segments()
            .iter()
            .flat_map(|&(s, p)| self.segment(s, p).iter().copied())
            .collect()
    }
}

fn padded(img: &Image) -> Result<Image> {
    let (h, w) = img.dims();
    img.pad_reflect_to(h.div_ceil(32) * 32, w.div_ceil(32) * 32)
}

/// Per-channel spatial means and standard deviations of every appearance
/// block output, for one image at its given resolution.
pub fn pooled_stats(model: &DualHeadUNet, img: &Image) -> Result<(Vec<f32>, Vec<f32>)> {
    let x = images_to_tensor(&[&padded(img)?], model.dtype())?;
    let mut means = Vec::with_capacity(model.config().appearance_len());
    let mut stds = Vec::with_capacity(model.config().appearance_len());
    for m in model.appearance_maps(&x)? {
        let m = m.detach();
        let mu = m.mean_keepdim((2, 3))?;
        let sd = m.broadcast_sub(&mu)?.sqr()?.mean((2, 3))?.sqrt()?;
        means.extend(mu.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?);
        stds.extend(sd.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?);
    }
    Ok((means, stds))
}

/// Full feature vector of one image. Inputs whose sides are not multiples
/// of 32 are reflect-padded at each scale.
pub fn extract_features(model: &DualHeadUNet, img: &Image) -> Result<QualityFeatures> {
    let (m1, s1) = pooled_stats(model, img)?;
    let (m2, s2) = pooled_stats(model, &img.half_scale()?)?;
    let block_len = m1.len();
    let z: Vec<f32> = [m1, s1, m2, s2].concat();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite quality feature".into()));
    }
    Ok(QualityFeatures { z, block_len })
}

/// Extracts features for many images, in parallel unless `workers` is 1.
pub fn extract_batch(model: &DualHeadUNet, images: &[Image], workers: usize) -> Result<Vec<QualityFeatures>> {
    if workers <= 1 {
        return images.iter().map(|img| extract_features(model, img)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| images.par_iter().map(|img| extract_features(model, img)).collect())
}

/// Full-reference feature `|z_ref − z_dis|`.
pub fn fr_feature(z_ref: &[f32], z_dis: &[f32]) -> Result<Vec<f32>> {
    if z_ref.len() != z_dis.len() {
        return Err(Error::Shape(format!(
            "reference features have length {}, distorted {}",
            z_ref.len(),
            z_dis.len()
        )));
    }
    Ok(z_ref.iter().zip(z_dis).map(|(a, b)| (a - b).abs()).collect())
}

/// Mean of per-frame feature vectors.
pub fn video_features(frames: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = frames.first().ok_or_else(|| Error::Data("a video needs at least one frame".into()))?;
    if frames.iter().any(|f| f.len() != first.len()) {
        return Err(Error::Shape("frames have different feature lengths".into()));
    }
    let n = frames.len() as f64;
    Ok((0..first.len())
        .map(|j| (frames.iter().map(|f| f[j] as f64).sum::<f64>() / n) as f32)
        .collect())
}

/// SHA-256 over the network configuration and every parameter value.
pub fn model_checksum(model: &DualHeadUNet) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.config())?);
    for (name, var) in model.params().iter() {
        h.update(name.as_bytes());
        for v in var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
            h.update(v.to_le_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub image_id: String,
    pub model: String,
    pub scale: Scale,
    pub pool: Pool,
}

const CACHE_MAGIC: &[u8; 8] = b"DSQFEAT\0";
const CACHE_VERSION: u32 = 1;

/// Feature segments keyed by (image id, model checksum, scale, pool).
///
/// File layout: magic, version (u32 LE), entry count (u64 LE), then per
/// entry a length-prefixed JSON key and a length-prefixed f32 LE vector,
/// closed by a SHA-256 of everything before it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCache {
    entries: BTreeMap<CacheKey, Vec<f32>>,
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, image_id: &str, model: &str, f: &QualityFeatures) {
        for (scale, pool) in SEGMENTS {
            let key = CacheKey {
                image_id: image_id.to_string(),
                model: model.to_string(),
                scale,
                pool,
            };
            self.entries.insert(key, f.segment(scale, pool).to_vec());
        }
    }

    pub fn get(&self, image_id: &str, model: &str) -> Option<QualityFeatures> {
        let mut z = Vec::new();
        let mut block_len = 0;
        for (scale, pool) in SEGMENTS {
            let key = CacheKey {
                image_id: image_id.to_string(),
                model: model.to_string(),
                scale,
                pool,
            };
            let seg = self.entries.get(&key)?;
            block_len = seg.len();
            z.extend_from_slice(seg);
        }
        Some(QualityFeatures { z, block_len })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, v) in &self.entries {
            let k = serde_json::to_vec(key)?;
            buf.extend_from_slice(&(k.len() as u32).to_le_bytes());
            buf.extend_from_slice(&k);
            buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
            v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        if buf.len() < 20 + 32 || &buf[..8] != CACHE_MAGIC {
            return Err(bad("not a feature cache"));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        if u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) != CACHE_VERSION {
            return Err(bad("unsupported cache version"));
        }
        let count = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
        let mut pos = 20;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + n).ok_or_else(|| bad("truncated entry"))?;
            pos += n;
            Ok(s)
        };
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let klen = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let key: CacheKey = serde_json::from_slice(take(klen)?)?;
            let n = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let v = take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.insert(key, v);
        }
        Ok(FeatureCache { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixelcore::Colorspace;
    use crate::synth::colorful_image;

    fn model() -> DualHeadUNet {
        DualHeadUNet::new(NetConfig::toy(), 3).unwrap()
    }

    #[test]
    fn toy_length_and_layout() {
        let m = model();
        let f = extract_features(&m, &colorful_image(64, 64, 1).unwrap()).unwrap();
        assert_eq!(f.len(), 480);
        assert_eq!(feature_len(&NetConfig::toy()), 480);
        assert_eq!(feature_len(&NetConfig::paper()), 7680);
        assert!(f.segment(Scale::Full, Pool::Std).iter().all(|&v| v >= 0.0));
        assert!(f.segment(Scale::Half, Pool::Std).iter().all(|&v| v >= 0.0));
        assert_eq!(f.select(Variant::SingleScaleMean), f.z[..120].to_vec());
        assert_eq!(f.select(Variant::MultiScaleMeanStd), f.z);
        let multi_mean = f.select(Variant::MultiScaleMean);
        assert_eq!(&multi_mean[120..], &f.z[240..360]);
    }

    #[test]
    fn constant_image_has_zero_spread() {
        let gray = Image::filled(64, 96, [0.4; 3], Colorspace::Srgb).unwrap();
        let f = extract_features(&model(), &gray).unwrap();
        for pool in [Scale::Full, Scale::Half].map(|s| f.segment(s, Pool::Std)) {
            assert!(pool.iter().all(|v| v.abs() < 1e-3), "{pool:?}");
        }
    }

    #[test]
    fn half_scale_path_matches_direct_extraction() {
        let m = model();
        let img = colorful_image(128, 64, 2).unwrap();
        let f = extract_features(&m, &img).unwrap();
        let g = extract_features(&m, &img.half_scale().unwrap()).unwrap();
        assert_eq!(f.segment(Scale::Half, Pool::Mean), g.segment(Scale::Full, Pool::Mean));
        assert_eq!(f.segment(Scale::Half, Pool::Std), g.segment(Scale::Full, Pool::Std));
    }

    #[test]
    fn odd_sizes_are_padded() {
        let f = extract_features(&model(), &colorful_image(50, 70, 4).unwrap()).unwrap();
        assert_eq!(f.len(), 480);
    }

    #[test]
    fn fr_feature_algebra() {
        assert_eq!(fr_feature(&[1.0, 2.0], &[3.0, 0.0]).unwrap(), vec![2.0, 2.0]);
        let (a, b) = ([0.5, -1.0, 4.0], [1.5, 2.0, 4.0]);
        assert_eq!(fr_feature(&a, &b).unwrap(), fr_feature(&b, &a).unwrap());
        assert!(fr_feature(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        assert!(fr_feature(&a, &[1.0]).is_err());
    }

    #[test]
    fn video_pooling() {
        assert_eq!(video_features(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(video_features(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(), vec![1.0, 1.0]);
        assert!(video_features(&[]).is_err());
    }

    #[test]
    fn batch_matches_single_and_cache_round_trips() {
        let m = model();
        let imgs: Vec<Image> = (0..3).map(|i| colorful_image(64, 64, i).unwrap()).collect();
        let serial = extract_batch(&m, &imgs, 1).unwrap();
        assert_eq!(serial, extract_batch(&m, &imgs, 2).unwrap());

        let sum = model_checksum(&m).unwrap();
        assert_eq!(sum, model_checksum(&model()).unwrap());
        assert_ne!(sum, model_checksum(&DualHeadUNet::new(NetConfig::toy(), 4).unwrap()).unwrap());
        let mut cache = FeatureCache::default();
        for (i, f) in serial.iter().enumerate() {
            cache.insert(&format!("img{i}"), &sum, f);
        }
        assert_eq!(cache.len(), 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.cache");
        cache.save(&path).unwrap();
        let back = FeatureCache::load(&path).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.get("img1", &sum).unwrap(), serial[1]);
        assert!(back.get("img1", "other").is_none());
        let mut raw = fs::read(&path).unwrap();
        raw[30] ^= 1;
        fs::write(&path, raw).unwrap();
        assert!(FeatureCache::load(&path).is_err());
    }
}

//! Manifests, in-memory datasets and quadruple construction.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{Bank, BankDomain, Transform};
use crate::error::{Error, Result};
use crate::pixelcore::{load_image, screen_image, Colorspace, Image, ScreeningThresholds};

/// Attempts at drawing a quadruple whose SDR patches pass screening.
pub const SCREEN_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub colorspace: Colorspace,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "train".into()
}

/// A JSON-lines list of training images.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub bank_domain: BankDomain,
}

fn domain_of(entries: &[ManifestEntry]) -> Result<BankDomain> {
    let sdr = entries.iter().all(|e| e.colorspace == Colorspace::Srgb);
    let hdr = entries.iter().all(|e| e.colorspace == Colorspace::PqBt2100);
    match (sdr, hdr) {
        (true, _) => Ok(BankDomain::Sdr),
        (_, true) => Ok(BankDomain::Hdr),
        _ => Err(Error::Data(
            "manifest mixes colorspaces; expected all SRGB or all PQ_BT2100".into(),
        )),
    }
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Data(format!(
                "manifest has {} entries; quadruples need at least 2 source images",
                entries.len()
            )));
        }
        let bank_domain = domain_of(&entries)?;
        Ok(Manifest { entries, bank_domain })
    }

    /// Parses a manifest. Relative paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                position: lineno + 1,
                token: line.chars().take(40).collect(),
                message: e.to_string(),
            })?;
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            entries.push(entry);
        }
        Manifest::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(path, err))?;
        }
        Ok(())
    }

    /// Checks that every entry exists and decodes.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            load_image(&e.path, e.colorspace)?;
        }
        Ok(())
    }
}

/// Decoded training images sharing one bank domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    domain: BankDomain,
    images: Vec<Image>,
    ids: Vec<String>,
}

impl Dataset {
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        let ids = (0..images.len()).map(|i| format!("image{i}")).collect();
        Dataset::with_ids(images, ids)
    }

    pub fn with_ids(images: Vec<Image>, ids: Vec<String>) -> Result<Self> {
        if images.len() != ids.len() {
            return Err(Error::Data("one id per image required".into()));
        }
        let entries: Vec<ManifestEntry> = images
            .iter()
            .map(|img| ManifestEntry {
                path: PathBuf::new(),
                colorspace: img.colorspace(),
                split: default_split(),
            })
            .collect();
        let domain = Manifest::new(entries)?.bank_domain;
        Ok(Dataset { domain, images, ids })
    }

    /// Loads every entry, optionally only those tagged with `split`.
    pub fn from_manifest(manifest: &Manifest, split: Option<&str>) -> Result<Self> {
        let mut images = Vec::new();
        let mut ids = Vec::new();
        for e in manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
            images.push(load_image(&e.path, e.colorspace)?);
            ids.push(e.path.display().to_string());
        }
        Dataset::with_ids(images, ids)
    }

    pub fn domain(&self) -> BankDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }
}

/// Four views `[x11, x12, x21, x22]` with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadruple {
    pub views: [Image; 4],
    pub sources: [usize; 2],
    pub offsets: [(usize, usize); 2],
    pub transform: Transform,
}

fn draw_offset(rng: &mut ChaCha8Rng, img: &Image, patch: usize) -> Result<(usize, usize)> {
    let (h, w) = img.dims();
    if h < patch || w < patch {
        return Err(Error::Size(format!("image {h}x{w} is smaller than patch size {patch}")));
    }
    Ok((rng.random_range(0..=h - patch), rng.random_range(0..=w - patch)))
}

/// Applies `t` to a window twice the patch size around the crop, then
/// crops, so spatial filters see real neighbours instead of patch borders.
fn transformed_crop(img: &Image, t: &Transform, (r, c): (usize, usize), patch: usize) -> Result<Image> {
    let (h, w) = img.dims();
    let half = patch / 2;
    let (r0, c0) = (r.saturating_sub(half), c.saturating_sub(half));
    let (r1, c1) = ((r + patch + half).min(h), (c + patch + half).min(w));
    let region = img.crop(r0, c0, r1 - r0, c1 - c0)?;
    t.apply(&region)?.crop(r - r0, c - c0, patch, patch)
}

/// Draws one training quadruple from two distinct sources. Deterministic in `seed`.
pub fn build_quadruple(data: &Dataset, bank: &Bank, patch_size: usize, seed: u64) -> Result<Quadruple> {
    if data.len() < 2 {
        return Err(Error::Data("quadruples need at least 2 source images".into()));
    }
    if bank.domain != data.domain() {
        return Err(Error::Config(format!(
            "bank domain {:?} does not match dataset domain {:?}",
            bank.domain,
            data.domain()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thresholds = ScreeningThresholds::default();
    for _ in 0..SCREEN_RETRIES {
        let i1 = rng.random_range(0..data.len());
        let i2 = (i1 + rng.random_range(1..data.len())) % data.len();
        let (img1, img2) = (&data.images[i1], &data.images[i2]);
        let o1 = draw_offset(&mut rng, img1, patch_size)?;
        let o2 = draw_offset(&mut rng, img2, patch_size)?;
        let t_seed: u64 = rng.random();
        let x11 = img1.crop(o1.0, o1.1, patch_size, patch_size)?;
        let x21 = img2.crop(o2.0, o2.1, patch_size, patch_size)?;
        if data.domain() == BankDomain::Sdr
            && !(screen_image(&x11, &thresholds)?.accepted && screen_image(&x21, &thresholds)?.accepted)
        {
            continue;
        }
        let transform = bank.sample(t_seed);
        let x12 = transformed_crop(img1, &transform, o1, patch_size)?;
        let x22 = transformed_crop(img2, &transform, o2, patch_size)?;
        return Ok(Quadruple {
            views: [x11, x12, x21, x22],
            sources: [i1, i2],
            offsets: [o1, o2],
            transform,
        });
    }
    Err(Error::Data(format!(
        "no patch pair passed screening after {SCREEN_RETRIES} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::UnitKind;
    use crate::synth::colorful_corpus;

    fn corpus() -> Dataset {
        Dataset::from_images(colorful_corpus(6, 80, 80, 5).unwrap()).unwrap()
    }

    #[test]
    fn quadruple_is_reproducible() {
        let data = corpus();
        let bank = Bank::sdr();
        let a = build_quadruple(&data, &bank, 32, 77).unwrap();
        assert_eq!(a, build_quadruple(&data, &bank, 32, 77).unwrap());
        assert_ne!(a.sources[0], a.sources[1]);
    }

    #[test]
    fn first_view_is_the_raw_patch() {
        let data = corpus();
        for seed in 0..5 {
            let q = build_quadruple(&data, &Bank::sdr(), 32, seed).unwrap();
            let (r, c) = q.offsets[0];
            assert_eq!(q.views[0], data.images()[q.sources[0]].crop(r, c, 32, 32).unwrap());
            let (r, c) = q.offsets[1];
            assert_eq!(q.views[2], data.images()[q.sources[1]].crop(r, c, 32, 32).unwrap());
        }
    }

    #[test]
    fn mean_shift_moves_both_sources_equally() {
        // Mid-tone flat-ish images keep the shift away from the clip points.
        let images: Vec<Image> = (0..4)
            .map(|i| {
                Image::from_fn(48, 48, Colorspace::Srgb, |r, c| {
                    let v = 0.4 + 0.002 * (r + c) as f32 + 0.01 * i as f32;
                    [v, v * 0.8, v * 0.6 + 0.1]
                })
                .unwrap()
            })
            .collect();
        let data = Dataset::from_images(images).unwrap();
        let bank = Bank::restricted(&[UnitKind::MeanShift]);
        for seed in 0..6 {
            let q = build_quadruple(&data, &bank, 32, seed).unwrap();
            let d1 = q.views[1].mean() - q.views[0].mean();
            let d2 = q.views[3].mean() - q.views[2].mean();
            assert!(d1.abs() > 1e-3, "{}", q.transform);
            assert!((d1 - d2).abs() < 1e-5, "{d1} vs {d2} for {}", q.transform);
        }
    }

    #[test]
    fn too_small_inputs_are_rejected() {
        let one = vec![Image::filled(40, 40, [0.5, 0.3, 0.2], Colorspace::Srgb).unwrap()];
        assert!(matches!(Dataset::from_images(one), Err(Error::Data(_))));
        let gray: Vec<Image> =
            (0..3).map(|_| Image::filled(40, 40, [0.5; 3], Colorspace::Srgb).unwrap()).collect();
        let data = Dataset::from_images(gray).unwrap();
        assert!(matches!(build_quadruple(&data, &Bank::sdr(), 32, 1), Err(Error::Data(_))));
        assert!(matches!(build_quadruple(&corpus(), &Bank::sdr(), 96, 1), Err(Error::Size(_))));
    }

    #[test]
    fn hdr_views_pair_pq_inputs_with_tone_mapped_outputs() {
        let images: Vec<Image> = (0..3)
            .map(|i| {
                Image::from_fn(40, 40, Colorspace::PqBt2100, |r, c| {
                    [0.3 + 0.005 * r as f32, 0.4, 0.2 + 0.005 * (c + i) as f32]
                })
                .unwrap()
            })
            .collect();
        let data = Dataset::from_images(images).unwrap();
        assert_eq!(data.domain(), BankDomain::Hdr);
        let q = build_quadruple(&data, &Bank::hdr(), 32, 4).unwrap();
        assert_eq!(q.views[0].colorspace(), Colorspace::PqBt2100);
        assert_eq!(q.views[1].colorspace(), Colorspace::Srgb);
        assert!(build_quadruple(&data, &Bank::sdr(), 32, 4).is_err());
    }

    #[test]
    fn manifest_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for (i, img) in colorful_corpus(2, 40, 40, 1).unwrap().iter().enumerate() {
            crate::pixelcore::save_png8(dir.path().join(format!("{i}.png")), img).unwrap();
        }
        let text = "{\"path\":\"0.png\",\"colorspace\":\"SRGB\",\"split\":\"train\"}\n\n{\"path\":\"1.png\",\"colorspace\":\"SRGB\",\"split\":\"test\"}\n";
        let mpath = dir.path().join("m.jsonl");
        fs::write(&mpath, text).unwrap();
        let m = Manifest::load(&mpath).unwrap();
        assert_eq!(m.bank_domain, BankDomain::Sdr);
        m.validate().unwrap();
        assert_eq!(Dataset::from_manifest(&m, None).unwrap().len(), 2);
        let copy = dir.path().join("copy.jsonl");
        m.save(&copy).unwrap();
        assert_eq!(Manifest::load(&copy).unwrap(), m);

        fs::write(&mpath, "{\"path\":\"0.png\",\"colorspace\":\"SRGB\"}\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(Error::Data(_))));
        fs::write(&mpath, "{\"path\":\"0.png\"}\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(Error::Parse { position: 1, .. })));
        fs::write(&mpath, text.replace("1.png", "missing.png")).unwrap();
        assert!(Manifest::load(&mpath).unwrap().validate().is_err());
    }
}

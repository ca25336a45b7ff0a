//! The SDR transform bank: 25 unit distortions at five severities each,
//! composed one to three deep.
//!
//! Canonical text form of a [`TransformSpec`] is
//! `kind:severity:seed[+kind:severity:seed...]`, e.g.
//! `GaussianBlur:3:0+Compress:5:0`.

pub mod filters;
mod ops;
mod severity;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixelcore::Image;

pub use ops::{apply_unit, mean_shift};
pub use severity::{severity_table, SeverityLevel};

macro_rules! unit_kinds {
    ($($name:ident),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum UnitKind {
            $($name),+
        }

        impl UnitKind {
            pub const ALL: [UnitKind; 25] = [$(UnitKind::$name),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(UnitKind::$name => stringify!($name)),+
                }
            }
        }

        impl FromStr for UnitKind {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $(stringify!($name) => Ok(UnitKind::$name),)+
                    _ => Err(Error::Parse { position: 0, token: s.to_string(), message: "unknown distortion kind".into() }),
                }
            }
        }
    };
}

unit_kinds!(
    NNResize,
    BilinearResize,
    BicubicResize,
    LanczosResize,
    MotionBlur,
    GaussianBlur,
    LensBlur,
    MeanShift,
    Contrast,
    Compress,
    UnsharpMasking,
    ColorBlock,
    Jitter,
    PatchJitter,
    RGBNoise,
    YUVNoise,
    ImpulseNoise,
    SpeckleNoise,
    Denoise,
    Brighten,
    Darken,
    ColorDiffuse,
    ColorShift,
    HSVSaturate,
    LABSaturate,
);

impl UnitKind {
    /// Kinds whose output depends on the noise seed.
    pub fn is_stochastic(self) -> bool {
        use UnitKind::*;
        matches!(
            self,
            RGBNoise | YUVNoise | ImpulseNoise | SpeckleNoise | Denoise | Jitter | PatchJitter | ColorBlock | MotionBlur
        )
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitDistortion {
    pub kind: UnitKind,
    severity: u8,
    pub noise_seed: u64,
}

impl UnitDistortion {
    pub fn new(kind: UnitKind, severity: u8, noise_seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Domain(format!("severity {severity} outside 1..=5")));
        }
        Ok(UnitDistortion {
            kind,
            severity,
            noise_seed,
        })
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }
}

impl fmt::Display for UnitDistortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.severity, self.noise_seed)
    }
}

/// An ordered composition of one to three unit distortions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformSpec {
    units: Vec<UnitDistortion>,
}

pub const MAX_DEPTH: usize = 3;

impl TransformSpec {
    pub fn new(units: Vec<UnitDistortion>) -> Result<Self> {
        if units.is_empty() || units.len() > MAX_DEPTH {
            return Err(Error::Domain(format!(
                "a transform holds 1..={MAX_DEPTH} units, got {}",
                units.len()
            )));
        }
        Ok(TransformSpec { units })
    }

    pub fn units(&self) -> &[UnitDistortion] {
        &self.units
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, u) in self.units.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{u}")?;
        }
        Ok(())
    }
}

fn parse_err(position: usize, token: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        token: token.to_string(),
        message: message.into(),
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Parses the canonical text form. The seed field may be omitted (`kind:severity`), defaulting to 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut units = Vec::new();
        let mut offset = 0usize;
        for unit_str in s.split('+') {
            let mut fields = Vec::new();
            let mut pos = offset;
            for field in unit_str.split(':') {
                fields.push((pos, field));
                pos += field.len() + 1;
            }
            if fields.len() < 2 || fields.len() > 3 {
                return Err(parse_err(offset, unit_str, "expected kind:severity[:seed]"));
            }
            let (kpos, ktok) = fields[0];
            let kind: UnitKind = ktok
                .trim()
                .parse()
                .map_err(|_| parse_err(kpos, ktok, "unknown distortion kind"))?;
            let (spos, stok) = fields[1];
            let severity: u8 = stok
                .trim()
                .parse()
                .map_err(|_| parse_err(spos, stok, "severity must be an integer in 1..=5"))?;
            let seed = match fields.get(2) {
                Some(&(p, tok)) => tok.trim().parse().map_err(|_| parse_err(p, tok, "seed must be an unsigned integer"))?,
                None => 0,
            };
            let unit = UnitDistortion::new(kind, severity, seed).map_err(|_| parse_err(spos, stok, "severity must be in 1..=5"))?;
            units.push(unit);
            offset += unit_str.len() + 1;
        }
        TransformSpec::new(units).map_err(|e| parse_err(0, s, e.to_string()))
    }
}

/// Samples transforms from a (possibly restricted) set of unit kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSampler {
    pub kinds: Vec<UnitKind>,
    pub max_depth: usize,
}

impl Default for TransformSampler {
    fn default() -> Self {
        TransformSampler {
            kinds: UnitKind::ALL.to_vec(),
            max_depth: MAX_DEPTH,
        }
    }
}

impl TransformSampler {
    pub fn restricted(kinds: &[UnitKind]) -> Self {
        TransformSampler {
            kinds: kinds.to_vec(),
            max_depth: MAX_DEPTH.min(kinds.len()),
        }
    }

    /// Depth uniform in 1..=max_depth, kinds without replacement, severities
    /// uniform in 1..=5.
    pub fn sample(&self, seed: u64) -> TransformSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_depth = self.max_depth.clamp(1, self.kinds.len().min(MAX_DEPTH));
        let depth = rng.random_range(1..=max_depth);
        let mut kinds = self.kinds.clone();
        kinds.shuffle(&mut rng);
        let units = kinds[..depth]
            .iter()
            .map(|&kind| UnitDistortion {
                kind,
                severity: rng.random_range(1..=5),
                noise_seed: rng.random::<u32>() as u64,
            })
            .collect();
        TransformSpec { units }
    }
}

/// Draws a transform from the full 25-kind bank.
pub fn sample_transform(seed: u64) -> TransformSpec {
    TransformSampler::default().sample(seed)
}

/// Applies the units left to right.
pub fn apply_transform(img: &Image, spec: &TransformSpec) -> Result<Image> {
    spec.units.iter().try_fold(img.clone(), |acc, u| apply_unit(&acc, u))
}

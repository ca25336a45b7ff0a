//! One interface over the SDR distortion bank and the HDR tone-mapping bank.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distortion::{apply_transform, TransformSampler, TransformSpec, UnitKind};
use crate::error::{Error, Result};
use crate::pixelcore::Image;
use crate::tonemap::{sample_tmo, tone_map, TmoSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BankDomain {
    Sdr,
    Hdr,
}

impl FromStr for BankDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SDR" => Ok(BankDomain::Sdr),
            "HDR" => Ok(BankDomain::Hdr),
            other => Err(Error::Config(format!("unknown bank domain `{other}`"))),
        }
    }
}

/// One element `t` of a transform bank.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Sdr(TransformSpec),
    Hdr(TmoSpec),
}

impl Transform {
    pub fn domain(&self) -> BankDomain {
        match self {
            Transform::Sdr(_) => BankDomain::Sdr,
            Transform::Hdr(_) => BankDomain::Hdr,
        }
    }

    /// SDR transforms take and return sRGB; HDR transforms take PQ and return sRGB.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            Transform::Sdr(spec) => apply_transform(img, spec),
            Transform::Hdr(spec) => tone_map(img, spec),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Sdr(s) => s.fmt(f),
            Transform::Hdr(s) => s.fmt(f),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let head = s.split(':').next().unwrap_or_default();
        if matches!(head, "HABLE" | "REINHARD02" | "ITU21_A") {
            s.parse().map(Transform::Hdr)
        } else {
            s.parse().map(Transform::Sdr)
        }
    }
}

/// A samplable bank of transforms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bank {
    pub domain: BankDomain,
    /// Restricts the SDR bank; empty means all 25 kinds.
    #[serde(default)]
    pub kinds: Vec<UnitKind>,
}

impl Bank {
    pub fn sdr() -> Self {
        Bank {
            domain: BankDomain::Sdr,
            kinds: Vec::new(),
        }
    }

    pub fn hdr() -> Self {
        Bank {
            domain: BankDomain::Hdr,
            kinds: Vec::new(),
        }
    }

    pub fn restricted(kinds: &[UnitKind]) -> Self {
        Bank {
            domain: BankDomain::Sdr,
            kinds: kinds.to_vec(),
        }
    }

    pub fn sample(&self, seed: u64) -> Transform {
        match self.domain {
            BankDomain::Hdr => Transform::Hdr(sample_tmo(seed)),
            BankDomain::Sdr if self.kinds.is_empty() => Transform::Sdr(TransformSampler::default().sample(seed)),
            BankDomain::Sdr => Transform::Sdr(TransformSampler::restricted(&self.kinds).sample(seed)),
        }
    }
}

//! The HDR transform bank: analytic tone-mapping operators followed by JPEG
//! compression at one of four levels.
//!
//! Curves take relative luminance where 1.0 is SDR reference white (100 nits),
//! except the BT.2446 Method A curve which works on luminance normalized to the
//! nominal HDR peak.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distortion::filters::jpeg_round_trip;
use crate::error::{Error, Result};
use crate::pixelcore::{pq_eotf, srgb_inverse_eotf, Colorspace, Image, BT2020_LUMA, BT709_LUMA};

/// JPEG quality for levels 1..=4.
pub const JPEG_LADDER: [u8; 4] = [60, 40, 25, 12];
pub const SDR_WHITE_NITS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TmoOperator {
    Hable,
    Reinhard02,
    Itu21A,
}

impl TmoOperator {
    pub const ALL: [TmoOperator; 3] = [TmoOperator::Hable, TmoOperator::Reinhard02, TmoOperator::Itu21A];

    pub fn name(self) -> &'static str {
        match self {
            TmoOperator::Hable => "HABLE",
            TmoOperator::Reinhard02 => "REINHARD02",
            TmoOperator::Itu21A => "ITU21_A",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmoSpec {
    pub operator: TmoOperator,
    /// Desaturation amount for Hable/Reinhard02, nominal HDR luminance (nits) for ITU21_A.
    pub param: f64,
    pub jpeg_level: u8,
}

impl TmoSpec {
    pub fn new(operator: TmoOperator, param: f64, jpeg_level: u8) -> Result<Self> {
        let spec = TmoSpec {
            operator,
            param,
            jpeg_level,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.operator {
            TmoOperator::Hable | TmoOperator::Reinhard02 if !(0.0..=1.0).contains(&self.param) => {
                return Err(Error::Domain(format!("desaturation {} outside [0, 1]", self.param)));
            }
            TmoOperator::Itu21A if !(100.0..=10_000.0).contains(&self.param) => {
                return Err(Error::Domain(format!("nominal luminance {} outside [100, 10000]", self.param)));
            }
            _ => {}
        }
        if !(1..=4).contains(&self.jpeg_level) {
            return Err(Error::Domain(format!("JPEG level {} outside 1..=4", self.jpeg_level)));
        }
        Ok(())
    }

    pub fn jpeg_quality(&self) -> u8 {
        JPEG_LADDER[self.jpeg_level as usize - 1]
    }
}

impl fmt::Display for TmoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.operator.name(), self.param, self.jpeg_level)
    }
}

impl FromStr for TmoSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split(':').collect();
        let err = |pos: usize, tok: &str, msg: &str| Error::Parse {
            position: pos,
            token: tok.to_string(),
            message: msg.to_string(),
        };
        if fields.len() != 3 {
            return Err(err(0, s, "expected OPERATOR:param:jpegLevel"));
        }
        let operator = match fields[0] {
            "HABLE" => TmoOperator::Hable,
            "REINHARD02" => TmoOperator::Reinhard02,
            "ITU21_A" => TmoOperator::Itu21A,
            other => return Err(err(0, other, "unknown tone-mapping operator")),
        };
        let ppos = fields[0].len() + 1;
        let param: f64 = fields[1].parse().map_err(|_| err(ppos, fields[1], "parameter must be a number"))?;
        let lpos = ppos + fields[1].len() + 1;
        let level: u8 = fields[2].parse().map_err(|_| err(lpos, fields[2], "JPEG level must be in 1..=4"))?;
        TmoSpec::new(operator, param, level).map_err(|e| err(0, s, &e.to_string()))
    }
}

/// Draws a TMO spec: operator uniform, desaturation uniform in [0, 1], nominal
/// luminance log-uniform in [500, 4000] nits, JPEG level uniform.
pub fn sample_tmo(seed: u64) -> TmoSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let operator = TmoOperator::ALL[rng.random_range(0..3)];
    let param = match operator {
        TmoOperator::Itu21A => (rng.random_range(500f64.ln()..4000f64.ln())).exp(),
        _ => rng.random_range(0.0..=1.0),
    };
    TmoSpec {
        operator,
        param,
        jpeg_level: rng.random_range(1..=4),
    }
}

const HABLE_A: f64 = 0.15;
const HABLE_B: f64 = 0.50;
const HABLE_C: f64 = 0.10;
const HABLE_D: f64 = 0.20;
const HABLE_E: f64 = 0.02;
const HABLE_F: f64 = 0.30;
const HABLE_WHITE: f64 = 11.2;

fn hable_partial(x: f64) -> f64 {
    ((x * (HABLE_A * x + HABLE_C * HABLE_B) + HABLE_D * HABLE_E) / (x * (HABLE_A * x + HABLE_B) + HABLE_D * HABLE_F))
        - HABLE_E / HABLE_F
}

/// Uncharted 2 filmic curve normalized so that the linear white point maps to 1.
pub fn hable_curve(x: f64) -> f64 {
    hable_partial(x.max(0.0)) / hable_partial(HABLE_WHITE)
}

/// Reinhard global operator `L (1 + L / white^2) / (1 + L)`; `white = inf`
/// gives `L / (1 + L)`.
pub fn reinhard02_curve(x: f64, white: f64) -> f64 {
    let x = x.max(0.0);
    let burn = if white.is_finite() { x / (white * white) } else { 0.0 };
    x * (1.0 + burn) / (1.0 + x)
}

fn rho(nits: f64) -> f64 {
    1.0 + 32.0 * (nits / 10_000.0).powf(1.0 / 2.4)
}

/// BT.2446 Method A luma mapping on gamma-encoded luma in [0, 1].
fn itu21a_luma(y_prime: f64, nominal_nits: f64) -> f64 {
    let rho_hdr = rho(nominal_nits);
    let yp = (1.0 + (rho_hdr - 1.0) * y_prime).ln() / rho_hdr.ln();
    let yc = if yp <= 0.7399 {
        1.077 * yp
    } else if yp <= 0.9909 {
        -1.1510 * yp * yp + 2.7811 * yp - 0.6302
    } else {
        0.5 * yp + 0.5
    };
    let rho_sdr = rho(SDR_WHITE_NITS);
    (rho_sdr.powf(yc) - 1.0) / (rho_sdr - 1.0)
}

/// BT.2446 Method A tone curve expressed on linear luminance normalized to the
/// nominal HDR peak; returns linear SDR luminance.
pub fn itu21a_curve(x: f64, nominal_nits: f64) -> f64 {
    let y_prime = x.clamp(0.0, 1.0).powf(1.0 / 2.4);
    itu21a_luma(y_prime, nominal_nits).clamp(0.0, 1.0).powf(2.4)
}

const BT2020_TO_BT709: [[f64; 3]; 3] = [
    [1.660_491, -0.587_641, -0.072_850],
    [-0.124_550, 1.132_900, -0.008_349],
    [-0.018_151, -0.100_579, 1.118_730],
];

fn bt2020_to_bt709(rgb: [f64; 3]) -> [f64; 3] {
    let m = &BT2020_TO_BT709;
    [0, 1, 2].map(|i| (m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2]).clamp(0.0, 1.0))
}

fn desaturate_pixel(p: [f32; 3], amount: f32) -> [f32; 3] {
    let y = BT709_LUMA[0] * p[0] + BT709_LUMA[1] * p[1] + BT709_LUMA[2] * p[2];
    p.map(|c| c + amount * (y - c))
}

/// Blends each pixel toward its BT.709 luma: `lerp(rgb, (Y, Y, Y), amount)`.
pub fn desaturate(img: &Image, amount: f32) -> Result<Image> {
    if !(0.0..=1.0).contains(&amount) {
        return Err(Error::Domain(format!("desaturation amount {amount} outside [0, 1]")));
    }
    Ok(img.map_pixels(|p| desaturate_pixel(p, amount)))
}

fn itu21a_pixel(nits: [f64; 3], nominal: f64) -> [f64; 3] {
    let [r, g, b] = nits.map(|v| (v / nominal).clamp(0.0, 1.0).powf(1.0 / 2.4));
    let (kr, kg, kb) = (BT2020_LUMA[0] as f64, BT2020_LUMA[1] as f64, BT2020_LUMA[2] as f64);
    let y = kr * r + kg * g + kb * b;
    if y <= 0.0 {
        return [0.0; 3];
    }
    let cb = (b - y) / 1.8814;
    let cr = (r - y) / 1.4746;
    let y_sdr = itu21a_luma(y, nominal);
    let f = y_sdr / (1.1 * y);
    let (cb_t, cr_t) = (f * cb, f * cr);
    let y_t = y_sdr - (0.1 * cr_t).max(0.0);
    let r_o = y_t + 1.4746 * cr_t;
    let b_o = y_t + 1.8814 * cb_t;
    let g_o = (y_t - kr * r_o - kb * b_o) / kg;
    [r_o, g_o, b_o].map(|v| v.clamp(0.0, 1.0).powf(2.4))
}

/// Tone curve and color handling without the sRGB encode and JPEG stages.
/// Returns linear BT.709 light.
pub fn tone_map_linear(img: &Image, spec: &TmoSpec) -> Result<Image> {
    img.expect_colorspace(Colorspace::PqBt2100)?;
    spec.validate()?;
    let (kr, kg, kb) = (BT2020_LUMA[0] as f64, BT2020_LUMA[1] as f64, BT2020_LUMA[2] as f64);
    let out = img.map_pixels(|p| {
        let nits = p.map(|v| pq_eotf(v as f64));
        let rgb709 = match spec.operator {
            TmoOperator::Hable | TmoOperator::Reinhard02 => {
                let rel = nits.map(|v| v / SDR_WHITE_NITS);
                let y = kr * rel[0] + kg * rel[1] + kb * rel[2];
                let y_out = match spec.operator {
                    TmoOperator::Hable => hable_curve(y),
                    _ => reinhard02_curve(y, f64::INFINITY),
                };
                let scale = if y > 0.0 { y_out / y } else { 0.0 };
                bt2020_to_bt709(rel.map(|v| v * scale))
            }
            TmoOperator::Itu21A => bt2020_to_bt709(itu21a_pixel(nits, spec.param)),
        };
        let lin = rgb709.map(|v| v as f32);
        match spec.operator {
            TmoOperator::Itu21A => lin,
            _ => desaturate_pixel(lin, spec.param as f32),
        }
    });
    Ok(out.with_colorspace(Colorspace::Linear))
}

/// PQ frame to JPEG-compressed sRGB.
pub fn tone_map(img: &Image, spec: &TmoSpec) -> Result<Image> {
    let linear = tone_map_linear(img, spec)?;
    let encoded = linear
        .map_pixels(|p| p.map(|v| srgb_inverse_eotf(v as f64) as f32))
        .with_colorspace(Colorspace::Srgb);
    jpeg_round_trip(&encoded, spec.jpeg_quality())
}

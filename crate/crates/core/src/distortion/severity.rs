//! Declared parameter ladders for the five severity levels of each kind.
//!
//! | kind | parameter | levels 1..5 |
//! |---|---|---|
//! | *Resize (4 kinds) | scale factor | 1/1.25, 1/1.5, 1/2, 1/3, 1/4 |
//! | MotionBlur | kernel length | 3, 5, 9, 13, 17 |
//! | GaussianBlur | sigma | 0.5, 1.0, 2.0, 3.5, 5.0 |
//! | LensBlur | disk radius | 1, 2, 3, 5, 7 |
//! | MeanShift | offset | 0.02, 0.05, 0.08, 0.12, 0.16 |
//! | Contrast | sigmoid gain | 1.5, 2.5, 4, 6, 9 |
//! | Compress | JPEG quality | 75, 50, 35, 20, 10 |
//! | UnsharpMasking | amount (sigma 1) | 0.5, 1, 1.5, 2.5, 4 |
//! | ColorBlock | patch count (side 32) | 2, 4, 6, 8, 10 |
//! | Jitter | max pixel offset | 1, 2, 3, 4, 5 |
//! | PatchJitter | max block offset (8px blocks) | 1, 2, 3, 5, 8 |
//! | RGBNoise / YUVNoise | sigma | 0.01, 0.02, 0.04, 0.07, 0.10 |
//! | ImpulseNoise | pixel probability | 0.01, 0.03, 0.05, 0.10, 0.20 |
//! | SpeckleNoise | sigma | 0.05, 0.10, 0.20, 0.30, 0.50 |
//! | Denoise | noise sigma / blur sigma | 0.02/0.6, 0.04/0.9, 0.06/1.2, 0.10/1.6, 0.15/2.0 |
//! | Brighten / Darken | gamma | 1.15, 1.3, 1.5, 1.8, 2.2 |
//! | ColorDiffuse | a*b* blur sigma | 1, 2, 4, 6, 8 |
//! | ColorShift | channel offset (px) | 1, 2, 3, 5, 8 |
//! | HSVSaturate | saturation factor | 0.8, 0.6, 0.4, 0.2, 0.0 |
//! | LABSaturate | a*b* factor | 1.3, 1.6, 2.0, 2.5, 3.0 |

use super::UnitKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeverityLevel {
    pub parameter: &'static str,
    pub value: f64,
    pub secondary: Option<(&'static str, f64)>,
    /// Monotone strength measure: `value` for increasing ladders, `1 - value`
    /// (or `1 / value`) for ladders that weaken a quantity.
    pub strength: f64,
}

pub(crate) const RESIZE_SCALES: [f64; 5] = [1.0 / 1.25, 1.0 / 1.5, 0.5, 1.0 / 3.0, 0.25];

fn primary(kind: UnitKind) -> (&'static str, [f64; 5]) {
    use UnitKind::*;
    match kind {
        NNResize | BilinearResize | BicubicResize | LanczosResize => ("scale", RESIZE_SCALES),
        MotionBlur => ("length", [3.0, 5.0, 9.0, 13.0, 17.0]),
        GaussianBlur => ("sigma", [0.5, 1.0, 2.0, 3.5, 5.0]),
        LensBlur => ("radius", [1.0, 2.0, 3.0, 5.0, 7.0]),
        MeanShift => ("offset", [0.02, 0.05, 0.08, 0.12, 0.16]),
        Contrast => ("gain", [1.5, 2.5, 4.0, 6.0, 9.0]),
        Compress => ("quality", [75.0, 50.0, 35.0, 20.0, 10.0]),
        UnsharpMasking => ("amount", [0.5, 1.0, 1.5, 2.5, 4.0]),
        ColorBlock => ("count", [2.0, 4.0, 6.0, 8.0, 10.0]),
        Jitter => ("max_offset", [1.0, 2.0, 3.0, 4.0, 5.0]),
        PatchJitter => ("max_offset", [1.0, 2.0, 3.0, 5.0, 8.0]),
        RGBNoise | YUVNoise => ("sigma", [0.01, 0.02, 0.04, 0.07, 0.10]),
        ImpulseNoise => ("probability", [0.01, 0.03, 0.05, 0.10, 0.20]),
        SpeckleNoise => ("sigma", [0.05, 0.10, 0.20, 0.30, 0.50]),
        Denoise => ("noise_sigma", [0.02, 0.04, 0.06, 0.10, 0.15]),
        Brighten | Darken => ("gamma", [1.15, 1.3, 1.5, 1.8, 2.2]),
        ColorDiffuse => ("sigma", [1.0, 2.0, 4.0, 6.0, 8.0]),
        ColorShift => ("offset", [1.0, 2.0, 3.0, 5.0, 8.0]),
        HSVSaturate => ("factor", [0.8, 0.6, 0.4, 0.2, 0.0]),
        LABSaturate => ("factor", [1.3, 1.6, 2.0, 2.5, 3.0]),
    }
}

fn secondary(kind: UnitKind) -> Option<(&'static str, [f64; 5])> {
    match kind {
        UnitKind::Denoise => Some(("blur_sigma", [0.6, 0.9, 1.2, 1.6, 2.0])),
        UnitKind::UnsharpMasking => Some(("sigma", [1.0; 5])),
        UnitKind::ColorBlock => Some(("side", [32.0; 5])),
        UnitKind::PatchJitter => Some(("block", [8.0; 5])),
        _ => None,
    }
}

fn strength(kind: UnitKind, v: f64) -> f64 {
    use UnitKind::*;
    match kind {
        NNResize | BilinearResize | BicubicResize | LanczosResize => 1.0 / v,
        Compress => 100.0 - v,
        HSVSaturate => 1.0 - v,
        _ => v,
    }
}

/// The five parameter sets for `kind`, mildest first.
pub fn severity_table(kind: UnitKind) -> Vec<SeverityLevel> {
    let (parameter, values) = primary(kind);
    let sec = secondary(kind);
    (0..5)
        .map(|i| SeverityLevel {
            parameter,
            value: values[i],
            secondary: sec.map(|(n, v)| (n, v[i])),
            strength: strength(kind, values[i]),
        })
        .collect()
}

/// Primary parameter for a (kind, severity) pair.
pub(crate) fn level(kind: UnitKind, severity: u8) -> f64 {
    primary(kind).1[severity as usize - 1]
}

pub(crate) fn secondary_level(kind: UnitKind, severity: u8) -> f64 {
    secondary(kind).map(|(_, v)| v[severity as usize - 1]).unwrap_or(0.0)
}

//! Disentanglement probes on held-out quadruples: do appearance deltas
//! track the transform, and do content features ignore it?

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::bank::Bank;
use crate::error::{Error, Result};
use crate::network::{images_to_tensor, DualHeadUNet};
use crate::trainer::{build_quadruple, sample_seed, Dataset, Quadruple};

const CHUNK: usize = 25;

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Each content map averaged over a 2×2 grid of cells, concatenated over
/// stages. Global pooling would give zero for standardized maps, so the
/// grid keeps coarse layout.
pub fn pooled_content(maps: &[Tensor]) -> Result<Tensor> {
    let mut parts = Vec::with_capacity(maps.len() * 4);
    for m in maps {
        let (_, _, h, w) = m.dims4()?;
        let rows = [(0, h.div_ceil(2)), (h / 2, h - h / 2)];
        let cols = [(0, w.div_ceil(2)), (w / 2, w - w / 2)];
        for &(r0, rl) in &rows {
            for &(c0, cl) in &cols {
                parts.push(m.narrow(2, r0, rl)?.narrow(3, c0, cl)?.mean((2, 3))?);
            }
        }
    }
    if parts.is_empty() {
        return Err(Error::Shape("no content maps".into()));
    }
    Ok(Tensor::cat(&parts, 1)?)
}

fn rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.detach().to_dtype(DType::F32)?.to_vec2()?)
}

/// Mean cosines over the probe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    /// `cos(Δa1, Δa2)` within a quadruple (one shared transform).
    pub same_transform: f64,
    /// `cos(Δa1, Δa2)` across quadruples with different transforms.
    pub mismatched_transform: f64,
    /// `cos(c11, c12)` on pooled content.
    pub self_content: f64,
    /// `cos(c11, c21)` on pooled content (different source images).
    pub cross_content: f64,
    pub quadruples: usize,
    pub mismatched_pairs: usize,
}

impl DisentanglementReport {
    pub fn appearance_margin(&self) -> f64 {
        self.same_transform - self.mismatched_transform
    }

    pub fn content_margin(&self) -> f64 {
        self.self_content - self.cross_content
    }
}

struct Encoded {
    delta1: Vec<Vec<f32>>,
    delta2: Vec<Vec<f32>>,
    c11: Vec<Vec<f32>>,
    c12: Vec<Vec<f32>>,
    c21: Vec<Vec<f32>>,
}

fn encode(model: &DualHeadUNet, quads: &[Quadruple]) -> Result<Encoded> {
    let mut out = Encoded {
        delta1: Vec::new(),
        delta2: Vec::new(),
        c11: Vec::new(),
        c12: Vec::new(),
        c21: Vec::new(),
    };
    for chunk in quads.chunks(CHUNK) {
        let n = chunk.len();
        let imgs: Vec<_> = (0..4).flat_map(|v| chunk.iter().map(move |q| &q.views[v])).collect();
        let x = images_to_tensor(&imgs, model.dtype())?;
        let a = model.appearance_tensor(&x)?;
        let pc = pooled_content(&model.content_maps(&x)?)?;
        let view = |t: &Tensor, v: usize| t.narrow(0, v * n, n);
        out.delta1.extend(rows(&(view(&a, 1)? - view(&a, 0)?)?)?);
        out.delta2.extend(rows(&(view(&a, 3)? - view(&a, 2)?)?)?);
        out.c11.extend(rows(&view(&pc, 0)?)?);
        out.c12.extend(rows(&view(&pc, 1)?)?);
        out.c21.extend(rows(&view(&pc, 2)?)?);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Builds `count` quadruples from `data` and measures appearance-delta
/// alignment and content invariance. Mismatched pairs pair quadruple `k`'s
/// first delta with quadruple `k+1`'s second, skipping equal transforms.
pub fn probe_disentanglement(
    model: &DualHeadUNet,
    data: &Dataset,
    bank: &Bank,
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<DisentanglementReport> {
    if count < 2 {
        return Err(Error::Config("the probe needs at least 2 quadruples".into()));
    }
    let quads: Vec<Quadruple> = (0..count as u64)
        .map(|k| build_quadruple(data, bank, patch_size, sample_seed(seed, u64::MAX, k)))
        .collect::<Result<_>>()?;
    let e = encode(model, &quads)?;
    let mismatched: Vec<f64> = (0..count)
        .filter(|&k| quads[k].transform != quads[(k + 1) % count].transform)
        .map(|k| cosine(&e.delta1[k], &e.delta2[(k + 1) % count]))
        .collect();
    Ok(DisentanglementReport {
        same_transform: mean((0..count).map(|k| cosine(&e.delta1[k], &e.delta2[k]))),
        mismatched_transform: mean(mismatched.iter().copied()),
        self_content: mean((0..count).map(|k| cosine(&e.c11[k], &e.c12[k]))),
        cross_content: mean((0..count).map(|k| cosine(&e.c11[k], &e.c21[k]))),
        quadruples: count,
        mismatched_pairs: mismatched.len(),
    })
}

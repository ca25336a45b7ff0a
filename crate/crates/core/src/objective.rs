//! Training losses: Charbonnier plus DFT reconstruction terms, appearance
//! mixing and content shuffling for cross-reconstruction, and symmetrized
//! in-batch InfoNCE on content and appearance-change vectors.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, WithDType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DualHeadUNet, ParamStore};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_f: f64,
    pub beta: f64,
    pub tau: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_f: 0.1,
            beta: 0.5,
            tau: 0.2,
            eps: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_f) || !ok(self.beta) {
            return Err(Error::Config("lambda_f and beta must be finite and non-negative".into()));
        }
        if !(self.tau > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("tau and eps must be positive".into()));
        }
        Ok(())
    }
}

fn same_shape(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("shape mismatch: {:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok(())
}

/// Per-sample Charbonnier loss `sqrt(||x - y||^2 + eps^2)` over everything
/// but the leading batch axis. Returns shape `N`.
pub fn charbonnier(x: &Tensor, y: &Tensor, eps: f64) -> Result<Tensor> {
    same_shape(x, y)?;
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("charbonnier eps {eps} is negative")));
    }
    let sq = (x - y)?.sqr()?.flatten_from(1)?.sum(1)?;
    Ok((sq + eps * eps)?.sqrt()?)
}

/// Per-sample `sum_c sum_k |DFT2(x_c - y_c)[k]|` with the unnormalized DFT.
/// Input is `N × C × H × W`; returns shape `N`.
pub fn frequency_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape(x, y)?;
    x.dims4()?;
    let d = (x - y)?.contiguous()?;
    Ok(d.apply_op1(DftL1)?)
}

/// `charbonnier + lambda_f * frequency_loss`, per sample.
pub fn recon_loss(x: &Tensor, y: &Tensor, lambda_f: f64, eps: f64) -> Result<Tensor> {
    let c = charbonnier(x, y, eps)?;
    if lambda_f == 0.0 {
        return Ok(c);
    }
    Ok((c + (frequency_loss(x, y)? * lambda_f)?)?)
}

/// 2-D DFT of a real `h × w` plane, row-major.
fn dft2(plane: &[f64], h: usize, w: usize, planner: &mut FftPlanner<f64>, inverse: bool) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    dft2_in_place(&mut buf, h, w, planner, inverse);
    buf
}

fn dft2_in_place(buf: &mut [Complex<f64>], h: usize, w: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Flattened values with their (b, c, h, w) dims.
type Planes = (Vec<f64>, (usize, usize, usize, usize));

fn planes<T: WithDType>(storage: &[T], layout: &Layout) -> candle_core::Result<Planes> {
    let dims = layout.shape().dims4()?;
    let data = match layout.contiguous_offsets() {
        Some((a, b)) => storage[a..b].iter().map(|v| v.to_f64()).collect(),
        None => candle_core::bail!("dft loss expects a contiguous input"),
    };
    Ok((data, dims))
}

fn cpu_f64(storage: &CpuStorage, layout: &Layout) -> candle_core::Result<Planes> {
    match storage {
        CpuStorage::F32(s) => planes(s, layout),
        CpuStorage::F64(s) => planes(s, layout),
        _ => candle_core::bail!("dft loss supports f32 and f64 only"),
    }
}

fn to_storage(values: Vec<f64>, like: &CpuStorage) -> CpuStorage {
    match like {
        CpuStorage::F32(_) => CpuStorage::F32(values.into_iter().map(|v| v as f32).collect()),
        _ => CpuStorage::F64(values),
    }
}

struct DftL1;

impl CustomOp1 for DftL1 {
    fn name(&self) -> &'static str {
        "dft-l1"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (data, (n, c, h, w)) = cpu_f64(storage, layout)?;
        let mut planner = FftPlanner::new();
        let hw = h * w;
        let out = (0..n)
            .map(|i| {
                (0..c)
                    .map(|ch| {
                        let off = (i * c + ch) * hw;
                        dft2(&data[off..off + hw], h, w, &mut planner, false)
                            .iter()
                            .map(|z| z.norm())
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        Ok((to_storage(out, storage), Shape::from(n)))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let n = arg.dims()[0];
        let g = arg.contiguous()?.apply_op1_no_bwd(&DftL1Grad)?;
        Ok(Some(g.broadcast_mul(&grad_res.reshape((n, 1, 1, 1))?)?))
    }
}

/// Gradient of [`DftL1`]: `Re(IDFT(Z / |Z|))` with the unnormalized inverse,
/// taking zero where `|Z| = 0`.
struct DftL1Grad;

impl CustomOp1 for DftL1Grad {
    fn name(&self) -> &'static str {
        "dft-l1-grad"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (data, (n, c, h, w)) = cpu_f64(storage, layout)?;
        let mut planner = FftPlanner::new();
        let hw = h * w;
        let mut out = Vec::with_capacity(data.len());
        for plane in data.chunks(hw) {
            let mut z = dft2(plane, h, w, &mut planner, false);
            for v in z.iter_mut() {
                let m = v.norm();
                *v = if m > 0.0 { *v / m } else { Complex::new(0.0, 0.0) };
            }
            dft2_in_place(&mut z, h, w, &mut planner, true);
            out.extend(z.iter().map(|v| v.re));
        }
        Ok((to_storage(out, storage), Shape::from((n, c, h, w))))
    }
}

/// Appearance mixing: with `da_i = a_i2 - a_i1`,
/// `(a12 - da2, a11 + da2, a22 - da1, a21 + da1)`.
pub fn mix_appearance(a11: &Tensor, a12: &Tensor, a21: &Tensor, a22: &Tensor) -> Result<[Tensor; 4]> {
    same_shape(a11, a12)?;
    same_shape(a11, a21)?;
    same_shape(a11, a22)?;
    let da1 = (a12 - a11)?;
    let da2 = (a22 - a21)?;
    Ok([(a12 - &da2)?, (a11 + &da2)?, (a22 - &da1)?, (a21 + &da1)?])
}

/// Appearance replacement, the swap alternative to mixing:
/// `(a21, a22, a11, a12)`.
pub fn replace_appearance<T: Clone>(a11: &T, a12: &T, a21: &T, a22: &T) -> [T; 4] {
    [a21.clone(), a22.clone(), a11.clone(), a12.clone()]
}

/// Within-image content swap: `(c12, c11, c22, c21)`.
pub fn shuffle_content<T: Clone>(c11: &T, c12: &T, c21: &T, c22: &T) -> [T; 4] {
    [c12.clone(), c11.clone(), c22.clone(), c21.clone()]
}

/// View index `(i, j)` of each crossed prediction paired with the view it
/// is scored against.
pub fn cross_recon_targets() -> [((u8, u8), (u8, u8)); 4] {
    [((1, 1), (1, 1)), ((1, 2), (1, 2)), ((2, 1), (2, 1)), ((2, 2), (2, 2))]
}

fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-directional InfoNCE on raw similarities:
/// `-log(exp(s+/tau) / (exp(s+/tau) + sum exp(s-/tau)))`.
pub fn info_nce_from_similarities(pos: f64, negs: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau} must be positive")));
    }
    let logits: Vec<f64> = std::iter::once(pos).chain(negs.iter().copied()).map(|s| s / tau).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok((lse - pos / tau).max(0.0))
}

/// One-directional InfoNCE on L2-normalized vectors.
pub fn info_nce(q: &[f64], k_pos: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    if q.len() != k_pos.len() || negatives.iter().any(|n| n.len() != q.len()) {
        return Err(Error::Shape("InfoNCE vectors differ in length".into()));
    }
    let q = l2_normalize(q);
    let pos = dot(&q, &l2_normalize(k_pos));
    let negs: Vec<f64> = negatives.iter().map(|n| dot(&q, &l2_normalize(n))).collect();
    info_nce_from_similarities(pos, &negs, tau)
}

/// Symmetrized in-batch InfoNCE for `B × D` query and key matrices: row `i`
/// of `k` is the positive for row `i` of `q`, all other rows are negatives.
/// Returns `(L(q->k) + L(k->q)) / 2` averaged over the batch.
pub fn info_nce_symmetric(q: &Tensor, k: &Tensor, tau: f64) -> Result<Tensor> {
    same_shape(q, k)?;
    let (b, _) = q.dims2()?;
    let norm = |t: &Tensor| -> Result<Tensor> {
        let n = (t.sqr()?.sum_keepdim(1)? + 1e-24)?.sqrt()?;
        Ok(t.broadcast_div(&n)?)
    };
    let (q, k) = (norm(q)?, norm(k)?);
    let logits = (q.matmul(&k.t()?)? / tau)?;
    let eye = Tensor::eye(b, logits.dtype(), logits.device())?;
    let diag = (&logits * &eye)?.sum(1)?;
    let qk = (logits.log_sum_exp(1)? - &diag)?.mean_all()?;
    let kq = (logits.t()?.log_sum_exp(1)? - &diag)?.mean_all()?;
    Ok(((qk + kq)? * 0.5)?)
}

/// Contrastive query/key matrices for a batch.
#[derive(Debug, Clone)]
pub struct ContrastivePairs {
    /// `[vec(c11), vec(c21)]` per sample.
    pub content_q: Tensor,
    /// `[vec(c12), vec(c22)]` per sample.
    pub content_k: Tensor,
    /// `a12 - a11` per sample.
    pub appearance_q: Tensor,
    /// `a22 - a21` per sample.
    pub appearance_k: Tensor,
}

impl ContrastivePairs {
    pub fn batch_size(&self) -> usize {
        self.content_q.dims()[0]
    }

    /// Negative pairings per direction: every query against every other
    /// sample's key.
    pub fn negative_pairings(&self) -> usize {
        let b = self.batch_size();
        b * b.saturating_sub(1)
    }
}

/// Content contrastive vector of one view: the deepest content map,
/// flattened per sample.
pub fn content_vector(maps: &[Tensor]) -> Result<Tensor> {
    let deepest = maps.last().ok_or_else(|| Error::Shape("no content maps".into()))?;
    Ok(deepest.flatten_from(1)?)
}

/// Builds contrastive pairs from per-view content maps and appearance
/// vectors, each view batched over samples in the same order.
pub fn contrastive_pairs(content: [&[Tensor]; 4], appearance: [&Tensor; 4]) -> Result<ContrastivePairs> {
    let [c11, c12, c21, c22] = content.map(content_vector);
    let [a11, a12, a21, a22] = appearance;
    Ok(ContrastivePairs {
        content_q: Tensor::cat(&[c11?, c21?], 1)?,
        content_k: Tensor::cat(&[c12?, c22?], 1)?,
        appearance_q: (a12 - a11)?,
        appearance_k: (a22 - a21)?,
    })
}

/// Scalar loss values and the hyperparameters that combined them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_self: f64,
    pub l_cross: f64,
    pub l_c_nce: f64,
    pub l_a_nce: f64,
    pub total: f64,
    pub lambda_f: f64,
    pub beta: f64,
    pub tau: f64,
    pub eps: f64,
}

impl LossBreakdown {
    /// Column order of one training-log row.
    pub const CSV_HEADER: &'static str = "step,l_self,l_cross,l_c_nce,l_a_nce,total,lr";

    pub fn compose(l_self: f64, l_cross: f64, l_c_nce: f64, l_a_nce: f64, cfg: &LossConfig) -> Self {
        LossBreakdown {
            l_self,
            l_cross,
            l_c_nce,
            l_a_nce,
            total: (l_self + l_cross) + cfg.beta * (l_c_nce + l_a_nce),
            lambda_f: cfg.lambda_f,
            beta: cfg.beta,
            tau: cfg.tau,
            eps: cfg.eps,
        }
    }

    pub fn csv_row(&self, step: u64, lr: f64) -> String {
        format!(
            "{step},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.l_self, self.l_cross, self.l_c_nce, self.l_a_nce, self.total, lr
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.l_self, self.l_cross, self.l_c_nce, self.l_a_nce, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// The encoder/decoder triple the objective needs. Implemented by the
/// network; tests supply analytic models.
pub trait Autoencoder {
    fn content(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    fn appearance(&self, x: &Tensor) -> Result<Tensor>;
    fn decode(&self, content: &[Tensor], appearance: &Tensor, out_hw: (usize, usize)) -> Result<Tensor>;
}

impl Autoencoder for DualHeadUNet {
    fn content(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.content_maps(x)
    }

    fn appearance(&self, x: &Tensor) -> Result<Tensor> {
        self.appearance_tensor(x)
    }

    fn decode(&self, content: &[Tensor], appearance: &Tensor, out_hw: (usize, usize)) -> Result<Tensor> {
        self.decode_tensor(content, appearance, out_hw)
    }
}

/// Four batched views `x11, x12, x21, x22`, each `B × 3 × H × W`.
#[derive(Debug, Clone)]
pub struct Views {
    pub x: [Tensor; 4],
}

impl Views {
    pub fn new(x11: Tensor, x12: Tensor, x21: Tensor, x22: Tensor) -> Result<Self> {
        for t in [&x12, &x21, &x22] {
            same_shape(&x11, t)?;
        }
        x11.dims4()?;
        Ok(Views {
            x: [x11, x12, x21, x22],
        })
    }

    pub fn batch_size(&self) -> usize {
        self.x[0].dims()[0]
    }
}

fn split4(t: &Tensor, b: usize) -> Result<[Tensor; 4]> {
    Ok([t.narrow(0, 0, b)?, t.narrow(0, b, b)?, t.narrow(0, 2 * b, b)?, t.narrow(0, 3 * b, b)?])
}

/// Differentiable total loss with its scalar breakdown. Reconstruction terms
/// are summed over the four views and averaged over the batch.
pub fn total_loss<M: Autoencoder>(model: &M, views: &Views, cfg: &LossConfig) -> Result<(Tensor, LossBreakdown)> {
    cfg.validate()?;
    let b = views.batch_size();
    let (_, _, h, w) = views.x[0].dims4()?;
    let x = Tensor::cat(&views.x, 0)?;

    let maps = model.content(&x)?;
    let a = model.appearance(&x)?;

    let y = model.decode(&maps, &a, (h, w))?;
    let l_self = (recon_loss(&x, &y, cfg.lambda_f, cfg.eps)?.sum_all()? / b as f64)?;

    let per_view: Vec<[Tensor; 4]> = maps.iter().map(|m| split4(m, b)).collect::<Result<_>>()?;
    let crossed: Vec<Tensor> = per_view
        .iter()
        .map(|v| Ok(Tensor::cat(&shuffle_content(&v[0], &v[1], &v[2], &v[3]), 0)?))
        .collect::<Result<_>>()?;
    let [a11, a12, a21, a22] = split4(&a, b)?;
    let a_mix = Tensor::cat(&mix_appearance(&a11, &a12, &a21, &a22)?, 0)?;
    let y_cross = model.decode(&crossed, &a_mix, (h, w))?;
    // cross_recon_targets: each crossed prediction is scored against its own view.
    let l_cross = (recon_loss(&x, &y_cross, cfg.lambda_f, cfg.eps)?.sum_all()? / b as f64)?;

    let recon = (&l_self + &l_cross)?;
    let (total, l_c, l_a) = if b >= 2 {
        let content: Vec<Vec<Tensor>> = (0..4)
            .map(|v| per_view.iter().map(|pv| pv[v].clone()).collect())
            .collect();
        let pairs = contrastive_pairs(
            [&content[0], &content[1], &content[2], &content[3]],
            [&a11, &a12, &a21, &a22],
        )?;
        let l_c = info_nce_symmetric(&pairs.content_q, &pairs.content_k, cfg.tau)?;
        let l_a = info_nce_symmetric(&pairs.appearance_q, &pairs.appearance_k, cfg.tau)?;
        let total = (&recon + ((&l_c + &l_a)? * cfg.beta)?)?;
        (total, scalar(&l_c)?, scalar(&l_a)?)
    } else {
        log::warn!("batch of 1: contrastive terms skipped");
        (recon, 0.0, 0.0)
    };
    let breakdown = LossBreakdown::compose(scalar(&l_self)?, scalar(&l_cross)?, l_c, l_a, cfg);
    Ok((total, breakdown))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Outcome of comparing one analytic partial derivative with a central
/// finite difference.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// Relative error with an absolute floor so that two vanishing
    /// derivatives compare as equal.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Checks `count` randomly chosen scalar parameters of `params` against
/// central differences of `loss` with step `h`. `filter` restricts the
/// parameter names considered.
pub fn gradient_check<F>(
    params: &ParamStore,
    loss: F,
    count: usize,
    seed: u64,
    h: f64,
    filter: impl Fn(&str) -> bool,
) -> Result<Vec<GradCheck>>
where
    F: Fn() -> Result<Tensor>,
{
    let candidates: Vec<(&str, &Var)> = params.iter().filter(|(n, _)| filter(n)).collect();
    if candidates.is_empty() {
        return Err(Error::Config("no parameters match the gradient-check filter".into()));
    }
    let grads = loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (name, var) = candidates[rng.random_range(0..candidates.len())];
        let index = rng.random_range(0..var.elem_count());
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[index],
            None => 0.0,
        };
        let original = var.as_tensor().copy()?;
        let base: Vec<f64> = original.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let eval_at = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[index] += delta;
            let t = Tensor::from_vec(v, original.shape(), &Device::Cpu)?.to_dtype(var.dtype())?;
            var.set(&t)?;
            scalar(&loss()?)
        };
        let plus = eval_at(h)?;
        let minus = eval_at(-h)?;
        var.set(&original)?;
        out.push(GradCheck {
            param: name.to_string(),
            index,
            analytic,
            numeric: (plus - minus) / (2.0 * h),
        });
    }
    Ok(out)
}

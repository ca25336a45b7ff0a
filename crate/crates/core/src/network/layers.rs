//! Building blocks: replicate-padded convolution, linear, instance
//! normalization, product channel attention and a differentiable max-pool.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor, Var, WithDType};

use super::params::{LayerKind, ParamBuilder};
use crate::error::{Error, Result};

/// Epsilon inside the instance-norm denominator.
pub const IN_EPS: f64 = 1e-5;

/// Square convolution with replicate ("same") border padding.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        pb: &mut ParamBuilder,
        path: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = (c_in * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let weight = pb.normal(format!("{path}.weight"), &[c_out, c_in, k, k], std)?;
        let bias = if bias {
            Some(pb.constant(format!("{path}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        pb.store.register_layer(path, LayerKind::Conv);
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub(crate) fn with_bias_init(self, value: f64) -> Result<Self> {
        if let Some(b) = &self.bias {
            b.set(&b.ones_like()?.affine(value, 0.0)?)?;
        }
        Ok(self)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d_replicate(x, self.weight.as_tensor(), self.stride, self.pad)?;
        match &self.bias {
            Some(b) => {
                let c = b.dims()[0];
                Ok(y.broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }
}

/// Convolution with replicate border padding, as im2col followed by one
/// matrix product. `w` is `C_out × C_in × k × k`.
pub fn conv2d_replicate(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4()?;
    let (c_out, c_in, k, k2) = w.dims4()?;
    if c_in != c || k != k2 {
        return Err(Error::Shape(format!(
            "conv weight {:?} does not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let geom = Geometry {
        k,
        stride,
        pad,
        out: (oh, ow),
    };
    let cols = x.contiguous()?.apply_op1(Im2Col(geom))?;
    let y = w.reshape((c_out, c * k * k))?.matmul(&cols)?;
    Ok(y.reshape((c_out, n, oh, ow))?.permute((1, 0, 2, 3))?.contiguous()?)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    k: usize,
    stride: usize,
    pad: usize,
    out: (usize, usize),
}

impl Geometry {
    /// Source index along one axis for output position `o` and tap `t`,
    /// clamped into the image (replicate padding).
    fn src(&self, o: usize, t: usize, len: usize) -> usize {
        (o * self.stride + t).saturating_sub(self.pad).min(len - 1)
    }
}

/// `N × C × H × W` to `(C·k·k) × (N·OH·OW)`.
struct Im2Col(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col-replicate"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let g = self.0;
        fn run<T: WithDType>(x: &[T], dims: (usize, usize, usize, usize), g: Geometry) -> Vec<T> {
            let (n, c, h, w) = dims;
            let (oh, ow) = g.out;
            let l = n * oh * ow;
            let mut out = vec![T::zero(); c * g.k * g.k * l];
            for ci in 0..c {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let row = ((ci * g.k + ky) * g.k + kx) * l;
                        for ni in 0..n {
                            let plane = &x[(ni * c + ci) * h * w..][..h * w];
                            let dst = &mut out[row + ni * oh * ow..][..oh * ow];
                            for oy in 0..oh {
                                let sy = g.src(oy, ky, h) * w;
                                for ox in 0..ow {
                                    dst[oy * ow + ox] = plane[sy + g.src(ox, kx, w)];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        let (n, c, _, _) = dims;
        let shape = Shape::from((c * g.k * g.k, n * g.out.0 * g.out.1));
        let out = match storage {
            CpuStorage::F32(s) => CpuStorage::F32(run(contiguous_slice(s, layout)?, dims, g)),
            CpuStorage::F64(s) => CpuStorage::F64(run(contiguous_slice(s, layout)?, dims, g)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad_res
            .contiguous()?
            .apply_op1_no_bwd(&Col2Im(self.0, arg.dims4()?))?;
        Ok(Some(g))
    }
}

/// Adjoint of [`Im2Col`]: scatters column gradients back onto the input,
/// accumulating at replicated border pixels.
struct Col2Im(Geometry, (usize, usize, usize, usize));

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im-replicate"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (g, dims) = (self.0, self.1);
        fn run<T: WithDType>(cols: &[T], dims: (usize, usize, usize, usize), g: Geometry) -> Vec<T> {
            let (n, c, h, w) = dims;
            let (oh, ow) = g.out;
            let l = n * oh * ow;
            let mut out = vec![T::zero(); n * c * h * w];
            for ci in 0..c {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let row = ((ci * g.k + ky) * g.k + kx) * l;
                        for ni in 0..n {
                            let plane = &mut out[(ni * c + ci) * h * w..][..h * w];
                            let src = &cols[row + ni * oh * ow..][..oh * ow];
                            for oy in 0..oh {
                                let sy = g.src(oy, ky, h) * w;
                                for ox in 0..ow {
                                    plane[sy + g.src(ox, kx, w)] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        let out = match storage {
            CpuStorage::F32(s) => CpuStorage::F32(run(contiguous_slice(s, layout)?, dims, g)),
            CpuStorage::F64(s) => CpuStorage::F64(run(contiguous_slice(s, layout)?, dims, g)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, Shape::from(dims)))
    }
}

/// Fully connected layer acting on `N × in` matrices.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub(crate) fn new(
        pb: &mut ParamBuilder,
        path: &str,
        d_in: usize,
        d_out: usize,
        std: f64,
        bias_init: f64,
    ) -> Result<Self> {
        let weight = pb.normal(format!("{path}.weight"), &[d_out, d_in], std)?;
        let bias = pb.constant(format!("{path}.bias"), &[d_out], bias_init)?;
        pb.store.register_layer(path, LayerKind::Linear);
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Instance normalization with optional learned per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    affine: Option<(Var, Var)>,
}

impl InstanceNorm {
    pub(crate) fn new(pb: &mut ParamBuilder, path: &str, c: usize, affine: bool) -> Result<Self> {
        let affine = if affine {
            Some((
                pb.constant(format!("{path}.gamma"), &[c], 1.0)?,
                pb.constant(format!("{path}.beta"), &[c], 0.0)?,
            ))
        } else {
            None
        };
        pb.store.register_layer(path, LayerKind::InstanceNorm);
        Ok(InstanceNorm { affine })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = instance_norm(x)?;
        match &self.affine {
            Some((g, b)) => {
                let c = g.dims()[0];
                Ok(y
                    .broadcast_mul(&g.as_tensor().reshape((1, c, 1, 1))?)?
                    .broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }
}

/// Standardizes every (sample, channel) plane: `(F - mean) / sqrt(var + eps)`
/// with the biased spatial variance. Constant planes (including 1×1 ones)
/// map to zero.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    x.dims4()?;
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    let denom = (var + IN_EPS)?.sqrt()?;
    Ok(centered.broadcast_div(&denom)?)
}

/// Product channel attention: `out[n,c,h,w] = x[n,c,h,w] * a[n,c]`.
pub fn channel_attention(x: &Tensor, a: &Tensor) -> Result<Tensor> {
    let (n, c, _, _) = x.dims4()?;
    match a.dims() {
        &[an, ac] if an == n && ac == c => Ok(x.broadcast_mul(&a.reshape((n, c, 1, 1))?)?),
        other => Err(Error::Shape(format!(
            "channel attention expects a {n}x{c} vector, got {other:?}"
        ))),
    }
}

/// Nearest-neighbour upsampling to `(h, w)`. Integer factors go through
/// broadcasting so gradients accumulate correctly when the input has other
/// consumers.
pub fn upsample_nearest(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, xh, xw) = x.dims4()?;
    if (xh, xw) == (h, w) {
        return Ok(x.clone());
    }
    if h.is_multiple_of(xh) && w.is_multiple_of(xw) {
        let (sh, sw) = (h / xh, w / xw);
        return Ok(x
            .reshape((n, c, xh, 1, xw, 1))?
            .broadcast_as((n, c, xh, sh, xw, sw))?
            .reshape((n, c, h, w))?);
    }
    Ok(x.upsample_nearest2d(h, w)?)
}

/// 3×3 stride-2 max-pool over replicate-padded input; output size is
/// `ceil(H/2) × ceil(W/2)`.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let x = x.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?.contiguous()?;
    Ok(x.apply_op1(MaxPool3x3S2)?)
}

fn pooled(len: usize) -> usize {
    (len - 3) / 2 + 1
}

/// For each output cell, the flat input index of the first maximum.
fn argmax_indices<T: WithDType + PartialOrd>(src: &[T], dims: (usize, usize, usize, usize)) -> Vec<usize> {
    let (n, c, h, w) = dims;
    let (oh, ow) = (pooled(h), pooled(w));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

fn contiguous_slice<'a, T: WithDType>(s: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&s[a..b]),
        None => candle_core::bail!("expected a contiguous input"),
    }
}

struct MaxPool3x3S2;

impl CustomOp1 for MaxPool3x3S2 {
    fn name(&self) -> &'static str {
        "max-pool-3x3-s2"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let (n, c, h, w) = dims;
        if h < 3 || w < 3 {
            candle_core::bail!("max-pool input too small: {h}x{w}");
        }
        let shape = Shape::from((n, c, pooled(h), pooled(w)));
        fn run<T: WithDType + PartialOrd>(s: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
            argmax_indices(s, dims).into_iter().map(|i| s[i]).collect()
        }
        let out = match storage {
            CpuStorage::F32(s) => CpuStorage::F32(run(contiguous_slice(s, layout)?, dims)),
            CpuStorage::F64(s) => CpuStorage::F64(run(contiguous_slice(s, layout)?, dims)),
            _ => candle_core::bail!("max-pool supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = arg
            .contiguous()?
            .apply_op2_no_bwd(&grad_res.contiguous()?, &MaxPoolBackward)?;
        Ok(Some(g))
    }
}

/// Routes each output gradient to the first maximal input of its window.
struct MaxPoolBackward;

impl CustomOp2 for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "max-pool-3x3-s2-bwd"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        fn run<T: WithDType + PartialOrd>(x: &[T], g: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
            let mut out = vec![T::zero(); x.len()];
            for (o, i) in argmax_indices(x, dims).into_iter().enumerate() {
                out[i] += g[o];
            }
            out
        }
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                CpuStorage::F32(run(contiguous_slice(x, l1)?, contiguous_slice(g, l2)?, dims))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                CpuStorage::F64(run(contiguous_slice(x, l1)?, contiguous_slice(g, l2)?, dims))
            }
            _ => candle_core::bail!("max-pool backward dtype mismatch"),
        };
        Ok((out, l1.shape().clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f64], shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn instance_norm_of_ramp() {
        let y = instance_norm(&t(&[1.0, 2.0, 3.0, 4.0], (1, 1, 2, 2))).unwrap();
        let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in y.iter().zip([-1.3416, -0.4472, 0.4472, 1.3416]) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn instance_norm_constant_is_zero() {
        let y = instance_norm(&t(&[0.75; 16], (1, 1, 4, 4))).unwrap();
        let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_affine_invariance() {
        let v: Vec<f64> = (0..32).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let x = t(&v, (1, 2, 4, 4));
        let a = instance_norm(&x).unwrap();
        let b = instance_norm(&x.affine(3.5, -2.0).unwrap()).unwrap();
        let d: f64 = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn instance_norm_single_pixel_is_zero() {
        let y = instance_norm(&t(&[1.0, -4.0], (1, 2, 1, 1))).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn channel_attention_cases() {
        let x = t(&[1.0, 2.0], (1, 1, 1, 2));
        let a = Tensor::new(&[[3.0f64]], &Device::Cpu).unwrap();
        let y: Vec<f64> = channel_attention(&x, &a).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y, vec![3.0, 6.0]);

        let x = t(&[0.5, -1.0, 2.0, 4.0, 1.5, -3.0, 0.0, 7.0], (1, 2, 2, 2));
        let ones = Tensor::ones((1, 2), DType::F64, &Device::Cpu).unwrap();
        let same = channel_attention(&x, &ones).unwrap();
        assert_eq!(
            same.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        let zero = channel_attention(&x, &ones.zeros_like().unwrap()).unwrap();
        assert!(zero.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&v| v == 0.0));
        assert!(channel_attention(&x, &Tensor::ones((1, 3), DType::F64, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn upsample_gradient_accumulates_with_other_consumers() {
        let x = Var::from_tensor(&t(&[1.0, -2.0], (1, 2, 1, 1))).unwrap();
        let y = upsample_nearest(x.as_tensor(), 2, 2).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1.0, 1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0]);
        let loss = (y.sum_all().unwrap() + x.as_tensor().sqr().unwrap().sum_all().unwrap()).unwrap();
        let g = loss.backward().unwrap();
        let g: Vec<f64> = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(g, vec![4.0 + 2.0, 4.0 - 4.0]);
    }

    /// Reference: explicit replicate padding followed by a direct loop.
    fn reference_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let p = x.pad_with_same(2, pad, pad).unwrap().pad_with_same(3, pad, pad).unwrap();
        let (n, c, h, wd) = p.dims4().unwrap();
        let (co, _, k, _) = w.dims4().unwrap();
        let pv: Vec<f64> = p.flatten_all().unwrap().to_vec1().unwrap();
        let wv: Vec<f64> = w.flatten_all().unwrap().to_vec1().unwrap();
        let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
        let mut out = Vec::with_capacity(n * co * oh * ow);
        for ni in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += wv[((o * c + ci) * k + ky) * k + kx]
                                        * pv[((ni * c + ci) * h + oy * stride + ky) * wd + ox * stride + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        Tensor::from_vec(out, (n, co, oh, ow), &Device::Cpu).unwrap()
    }

    /// Adjoint identity `<conv(x), g> = <x, conv^T(g)>` checked through the
    /// backward pass against the direct forward loop.
    fn adjoint_gap(x: &Var, w: &Tensor, g: &Tensor, stride: usize) -> f64 {
        let y = conv2d_replicate(x.as_tensor(), w, stride, 1).unwrap();
        let lhs: f64 = (reference_conv(x.as_tensor(), w, stride, 1) * g).unwrap().sum_all().unwrap().to_scalar().unwrap();
        let grads = (y * g).unwrap().sum_all().unwrap().backward().unwrap();
        let rhs: f64 = (grads.get(x.as_tensor()).unwrap() * x.as_tensor()).unwrap().sum_all().unwrap().to_scalar().unwrap();
        (lhs - rhs).abs()
    }

    fn ramp(n: usize, seed: usize) -> Vec<f64> {
        (0..n).map(|i| (((i + seed) * 7919) % 101) as f64 / 50.0 - 1.0).collect()
    }

    #[test]
    fn im2col_conv_matches_direct_convolution() {
        for (k, stride, side) in [(3, 1, 5), (3, 2, 7), (7, 2, 9), (1, 2, 6), (1, 1, 4), (3, 1, 1)] {
            let x = t(&ramp(2 * 3 * side * side, 1), (2, 3, side, side));
            let w = Tensor::from_vec(ramp(4 * 3 * k * k, 2), (4, 3, k, k), &Device::Cpu).unwrap();
            let a = conv2d_replicate(&x, &w, stride, k / 2).unwrap();
            let b = reference_conv(&x, &w, stride, k / 2);
            assert_eq!(a.dims(), b.dims());
            let d: f64 = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
            assert!(d < 1e-12, "k{k} s{stride} side{side}: {d}");
        }
    }

    #[test]
    fn im2col_conv_backward_is_the_adjoint() {
        // Replicate padding keeps the map linear in x, so the identity is exact.
        let x = Var::from_tensor(&t(&ramp(2 * 3 * 6 * 6, 3), (2, 3, 6, 6))).unwrap();
        let w = Tensor::from_vec(ramp(4 * 3 * 9, 4), (4, 3, 3, 3), &Device::Cpu).unwrap();
        for stride in [1, 2] {
            let oh = (6 + 2 - 3) / stride + 1;
            let g = t(&ramp(2 * 4 * oh * oh, 5), (2, 4, oh, oh));
            assert!(adjoint_gap(&x, &w, &g, stride) < 1e-10);
        }
        let wv = Var::from_tensor(&w).unwrap();
        let y = conv2d_replicate(x.as_tensor(), wv.as_tensor(), 1, 1).unwrap();
        let g = t(&ramp(2 * 4 * 36, 6), (2, 4, 6, 6));
        let grads = (&y * &g).unwrap().sum_all().unwrap().backward().unwrap();
        let lhs: f64 = (y * &g).unwrap().sum_all().unwrap().to_scalar().unwrap();
        let rhs: f64 = (grads.get(wv.as_tensor()).unwrap() * &w).unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn max_pool_shapes_and_values() {
        let v: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let y = max_pool_3x3_s2(&t(&v, (1, 1, 5, 5))).unwrap();
        assert_eq!(y.dims(), &[1, 1, 3, 3]);
        let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y, vec![6.0, 8.0, 9.0, 16.0, 18.0, 19.0, 21.0, 23.0, 24.0]);
        let y = max_pool_3x3_s2(&t(&vec![0.0; 64], (1, 1, 8, 8))).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
    }

    #[test]
    fn max_pool_gradient_routes_to_argmax() {
        let v: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let x = Var::from_tensor(&t(&v, (1, 1, 4, 4))).unwrap();
        let y = max_pool_3x3_s2(x.as_tensor()).unwrap();
        let grads = y.sum_all().unwrap().backward().unwrap();
        let g: Vec<f64> = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(g.iter().sum::<f64>(), 4.0);
        let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        for (i, &gi) in g.iter().enumerate() {
            if gi > 0.0 {
                assert!(y.contains(&v[i]));
            }
        }
    }
}

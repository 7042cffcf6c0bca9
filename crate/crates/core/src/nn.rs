//! Differentiable building blocks assembled from primitive tensor ops, so every
//! op here has a backward pass.

use candle_core::{DType, Tensor, D};

use crate::error::Result;

pub const LRELU_SLOPE: f64 = 0.2;
pub const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LRELU_SLOPE, 0.0)?)?)
}

/// Leaky ReLU scaled by sqrt(2), the activation used throughout style-based
/// generators.
pub fn lrelu_gain(x: &Tensor) -> Result<Tensor> {
    Ok(lrelu(x)?.affine(LRELU_GAIN, 0.0)?)
}

/// Dense layer with runtime weight/bias gains (equalized learning rate).
/// `weight` is `[out, in]`.
pub fn linear(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    weight_gain: f64,
    bias_gain: f64,
) -> Result<Tensor> {
    let w = weight.affine(weight_gain, 0.0)?;
    let y = x.matmul(&w.t()?)?;
    Ok(match bias {
        Some(b) => y.broadcast_add(&b.affine(bias_gain, 0.0)?)?,
        None => y,
    })
}

pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = bias.dim(0)?;
    Ok(x.broadcast_add(&bias.reshape((1, c, 1, 1))?)?)
}

/// Numerically stable softplus: max(x, 0) + log(1 + exp(-|x|)).
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

/// log(sigmoid(x)) without overflow.
pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(softplus(&x.neg()?)?.neg()?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Layer norm over the last dimension.
pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(xn.broadcast_mul(weight)?.broadcast_add(bias)?)
}

/// Normalized separable `[1, 3, 3, 1]` low-pass kernel, shape `[4, 4]`.
pub const FIR_TAPS: [f64; 4] = [1.0, 3.0, 3.0, 1.0];

/// The normalized 4×4 FIR kernel `[1, 3, 3, 1]ᵀ[1, 3, 3, 1] / 64`.
pub fn fir_kernel(dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut k = Vec::with_capacity(16);
    for a in FIR_TAPS {
        for b in FIR_TAPS {
            k.push(a * b / 64.0);
        }
    }
    Ok(Tensor::from_vec(k, (4, 4), device)?.to_dtype(dtype)?)
}

/// Apply the separable `[1, 3, 3, 1]` FIR kernel, scaled by `gain`, to every
/// channel independently. Output size is `H + pad.0 + pad.1 − 3`.
pub fn fir_filter(x: &Tensor, gain: f64, pad: (usize, usize)) -> Result<Tensor> {
    let xp = x.pad_with_zeros(2, pad.0, pad.1)?.pad_with_zeros(3, pad.0, pad.1)?;
    let (_, _, hp, wp) = xp.dims4()?;
    let taps = FIR_TAPS.map(|t| t / 8.0);
    let pass = |t: &Tensor, axis: usize, len: usize, scale: f64| -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (k, &tap) in taps.iter().enumerate() {
            let term = t.narrow(axis, k, len - 3)?.affine(tap * scale, 0.0)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        Ok(acc.expect("four taps"))
    };
    let y = pass(&xp, 2, hp, 1.0)?;
    pass(&y, 3, wp, gain)
}

/// 2-D convolution as explicit im2col and one batched matmul. Equivalent to
/// `Tensor::conv2d` with groups = 1, with a cheaper backward pass.
pub fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (o, ci, kh, kw) = weight.dims4()?;
    if ci != c {
        return Err(crate::error::Error::shape(format!("conv weight expects {ci} channels, input has {c}")));
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if hp < kh || wp < kw {
        return Err(crate::error::Error::shape(format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
    }
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    if kh == 1 && kw == 1 && stride == 1 && padding == 0 {
        let y = weight.reshape((o, c))?.broadcast_matmul(&x.reshape((n, c, h * w))?)?;
        return Ok(y.reshape((n, o, h, w))?);
    }
    let xp = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?.pad_with_zeros(3, padding, padding)?
    } else {
        x.clone()
    };
    // room for `ho·stride` rows so strided taps can be taken by reshape
    let need_h = kh - 1 + ho * stride;
    let need_w = kw - 1 + wo * stride;
    let xp = xp
        .pad_with_zeros(2, 0, need_h.saturating_sub(hp))?
        .pad_with_zeros(3, 0, need_w.saturating_sub(wp))?;
    let mut cols = Vec::with_capacity(kh * kw);
    for ky in 0..kh {
        for kx in 0..kw {
            let t = xp.narrow(2, ky, ho * stride)?.narrow(3, kx, wo * stride)?;
            let t = if stride > 1 {
                t.reshape((n, c, ho, stride, wo, stride))?
                    .narrow(3, 0, 1)?
                    .narrow(5, 0, 1)?
                    .reshape((n, c, ho * wo))?
            } else {
                t.reshape((n, c, ho * wo))?
            };
            cols.push(t);
        }
    }
    let cols = Tensor::stack(&cols, 2)?.reshape((n, c * kh * kw, ho * wo))?;
    let y = weight.reshape((o, c * kh * kw))?.broadcast_matmul(&cols)?;
    Ok(y.reshape((n, o, ho, wo))?)
}

/// Insert a zero after every sample along both spatial axes: `H×W -> 2H×2W`.
pub fn zero_insert(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let z = x.zeros_like()?;
    let xw = Tensor::stack(&[x, &z], 4)?.reshape((n, c, h, 2 * w))?;
    let zw = xw.zeros_like()?;
    Ok(Tensor::stack(&[&xw, &zw], 3)?.reshape((n, c, 2 * h, 2 * w))?)
}

/// 2x upsampling by zero insertion followed by the FIR kernel (gain 4).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    fir_filter(&zero_insert(x)?, 4.0, (2, 1))
}

/// FIR blur followed by stride-2 decimation: `H×W -> H/2×W/2`.
pub fn downsample2x(x: &Tensor) -> Result<Tensor> {
    let y = fir_filter(x, 1.0, (1, 1))?;
    let (_, _, h, w) = x.dims4()?;
    let idx_h = even_indices(h / 2, x.device())?;
    let idx_w = even_indices(w / 2, x.device())?;
    Ok(y.index_select(&idx_h, 2)?.index_select(&idx_w, 3)?)
}

fn even_indices(n: usize, device: &candle_core::Device) -> Result<Tensor> {
    let v: Vec<u32> = (0..n as u32).map(|i| 2 * i).collect();
    Ok(Tensor::from_vec(v, n, device)?)
}

/// Reverse the two spatial axes of a `[O, I, kh, kw]` kernel.
pub fn flip_kernel(w: &Tensor) -> Result<Tensor> {
    let (_, _, kh, kw) = w.dims4()?;
    let rh: Vec<u32> = (0..kh as u32).rev().collect();
    let rw: Vec<u32> = (0..kw as u32).rev().collect();
    let rh = Tensor::from_vec(rh, kh, w.device())?;
    let rw = Tensor::from_vec(rw, kw, w.device())?;
    Ok(w.index_select(&rh, 2)?.index_select(&rw, 3)?)
}

/// Spatial mean over the last two axes.
pub fn spatial_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Scalar value of a single-element tensor as f64.
pub fn scalar(x: &Tensor) -> Result<f64> {
    Ok(x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

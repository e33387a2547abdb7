//! Differentiable tensor helpers shared by the model heads.
//!
//! Resampling is expressed as multiplication by small interpolation
//! matrices, which keeps it on the autodiff path without custom kernels.

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;

/// Row-major `(out, in)` matrix of 1-D bilinear interpolation weights with
/// half-pixel centers (align-corners disabled).
pub fn bilinear_weights(input: usize, output: usize) -> Vec<f32> {
    let mut m = vec![0f32; input * output];
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = (src - i0 as f64).clamp(0.0, 1.0) as f32;
        m[o * input + i0] += 1.0 - frac;
        m[o * input + i1] += frac;
    }
    m
}

/// Row-major `(out, in)` matrix of adaptive average pooling bins:
/// bin `o` averages inputs `floor(o*in/out) .. ceil((o+1)*in/out)`.
pub fn adaptive_pool_weights(input: usize, output: usize) -> Vec<f32> {
    let mut m = vec![0f32; input * output];
    for o in 0..output {
        let start = (o * input) / output;
        let end = ((o + 1) * input).div_ceil(output);
        let inv = 1.0 / (end - start) as f32;
        for i in start..end {
            m[o * input + i] = inv;
        }
    }
    m
}

/// Applies `rows (oh, h)` and `cols (ow, w)` to the two spatial axes of a
/// `(b, c, h, w)` tensor: `out = rows · x · colsᵀ`.
fn separable(x: &Tensor, rows: &[f32], oh: usize, cols: &[f32], ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let dev = x.device();
    let dt = x.dtype();
    let cols_t = Tensor::from_slice(cols, (ow, w), dev)?.to_dtype(dt)?.t()?;
    let rows_t = Tensor::from_slice(rows, (oh, h), dev)?.to_dtype(dt)?.t()?;
    let y = x
        .contiguous()?
        .reshape((b * c * h, w))?
        .matmul(&cols_t.contiguous()?)?
        .reshape((b, c, h, ow))?;
    let y = y
        .transpose(2, 3)?
        .contiguous()?
        .reshape((b * c * ow, h))?
        .matmul(&rows_t.contiguous()?)?
        .reshape((b, c, ow, oh))?
        .transpose(2, 3)?
        .contiguous()?;
    Ok(y)
}

/// Bilinear resize of a `(b, c, h, w)` tensor, half-pixel convention.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == oh && w == ow {
        return Ok(x.clone());
    }
    separable(x, &bilinear_weights(h, oh), oh, &bilinear_weights(w, ow), ow)
}

/// Adaptive average pooling of a `(b, c, h, w)` tensor to `(b, c, oh, ow)`.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == oh && w == ow {
        return Ok(x.clone());
    }
    separable(
        x,
        &adaptive_pool_weights(h, oh),
        oh,
        &adaptive_pool_weights(w, ow),
        ow,
    )
}

/// `log(1 + e^x)`, evaluated as `relu(x) + log(1 + e^-|x|)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok(x.relu()?.add(&tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.neg()?.exp()?.affine(1.0, 1.0)?.recip()?)
}

/// Normalizes along `dim` to unit L2 length.
pub fn l2_normalize(x: &Tensor, dim: usize) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(dim)?.affine(1.0, 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Layer normalization over the last axis with affine parameters.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&var.affine(1.0, eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Converts a row-major `h x w` plane into a `(1, 1, h, w)` tensor.
pub fn plane_tensor(data: &[f32], h: usize, w: usize, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, (1, 1, h, w), device)?.to_dtype(DType::F32)?)
}

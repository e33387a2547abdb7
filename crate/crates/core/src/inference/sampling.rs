//! Reading the quarter-resolution descriptor and attention fields at
//! full-resolution pixel positions.
//!
//! A pixel `(x, y)` reads the field at `(x / 4, y / 4)` by bilinear
//! interpolation; positions past the last field row or column reuse it.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

pub const STRIDE: f64 = 4.0;

/// Channel-first field of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DenseMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} field needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// From a `(1, c, h, w)` or `(c, h, w)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => return Err(Error::Shape(format!("expected (1, c, h, w), got {:?}", t.dims()))),
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(c, h, w, data)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// The four lattice neighbours and weights of field position `(u, v)`.
fn corners(u: f64, v: f64, width: usize, height: usize) -> [(usize, f64); 4] {
    let x0 = (u.floor() as usize).min(width - 1);
    let y0 = (v.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = (u - x0 as f64).clamp(0.0, 1.0);
    let fy = (v - y0 as f64).clamp(0.0, 1.0);
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

fn check(coords: &[[f64; 2]], image_w: usize, image_h: usize) -> Result<()> {
    for (i, &[x, y]) in coords.iter().enumerate() {
        let inside = x >= 0.0 && y >= 0.0 && x <= (image_w - 1) as f64 && y <= (image_h - 1) as f64;
        if !inside {
            return Err(Error::InvalidValue(format!(
                "keypoint {i} at ({x}, {y}) lies outside the {image_w}x{image_h} image"
            )));
        }
    }
    Ok(())
}

/// Samples unit descriptors and attention weights at pixel coordinates.
/// Returns `coords.len() x dim` descriptors (row-major) and the weights.
pub fn sample_at_keypoints(d: &DenseMap, w: &DenseMap, coords: &[[f64; 2]]) -> Result<(Vec<f32>, Vec<f32>)> {
    if w.channels != 1 || (w.height, w.width) != (d.height, d.width) {
        return Err(Error::Shape("attention field must be one channel matching the descriptors".into()));
    }
    check(coords, d.width * STRIDE as usize, d.height * STRIDE as usize)?;
    let plane = d.height * d.width;
    let mut desc = Vec::with_capacity(coords.len() * d.channels);
    let mut weights = Vec::with_capacity(coords.len());
    for &[x, y] in coords {
        let taps = corners(x / STRIDE, y / STRIDE, d.width, d.height);
        let start = desc.len();
        for c in 0..d.channels {
            let base = &d.data[c * plane..(c + 1) * plane];
            let v: f64 = taps.iter().map(|&(i, t)| t * base[i] as f64).sum();
            desc.push(v as f32);
        }
        let norm = desc[start..].iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
        for v in &mut desc[start..] {
            *v = (*v as f64 / norm) as f32;
        }
        weights.push(taps.iter().map(|&(i, t)| t * w.data[i] as f64).sum::<f64>() as f32);
    }
    Ok((desc, weights))
}

/// `(n, h*w)` matrix whose rows hold the bilinear taps of each coordinate.
pub fn interpolation_matrix(coords: &[[f64; 2]], height: usize, width: usize, device: &Device) -> Result<Tensor> {
    check(coords, width * STRIDE as usize, height * STRIDE as usize)?;
    let mut m = vec![0f32; coords.len() * height * width];
    for (r, &[x, y]) in coords.iter().enumerate() {
        for (i, t) in corners(x / STRIDE, y / STRIDE, width, height) {
            m[r * height * width + i] += t as f32;
        }
    }
    Ok(Tensor::from_vec(m, (coords.len(), height * width), device)?)
}

/// Differentiable sampling of a `(c, h, w)` field, giving `(n, c)`.
pub fn sample_tensor(field: &Tensor, coords: &[[f64; 2]]) -> Result<Tensor> {
    let (c, h, w) = field.dims3()?;
    let s = interpolation_matrix(coords, h, w, field.device())?;
    Ok(s.matmul(&field.reshape((c, h * w))?.t()?)?)
}

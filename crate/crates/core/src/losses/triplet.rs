//! Attention-weighted triplet loss with hardest-negative mining.
//!
//! For anchor `i` the weighted descriptors are `x_i = w_i d_i` and
//! `x'_j = w'_j d'_j`. The positive distance is `||x_i - x'_i||`, the hardest
//! negative distance is `min_{j != i} ||x_i - x'_j||`, and the loss is
//!
//! ```text
//! L = Σ_i softmax(w / T)_i · max(0, pos_i - neg_i + margin)
//! ```
//!
//! where the softmax runs over the anchor-side attention of the batch. The
//! sum is not divided by `N`.
//!
//! Two implementations live here: plain `f64` slices (the reference used by
//! evaluation and by the finite-difference checks) and a tensor version that
//! carries gradients for training.

use candle_core::{DType, Tensor, D};

use crate::config::LossConfig;
use crate::error::{Error, Result};

/// `N` correspondences with descriptors and attention on both sides.
///
/// Descriptors are stored row-major, `N x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceBatch {
    pub points_a: Vec<[f64; 2]>,
    pub points_b: Vec<[f64; 2]>,
    pub dim: usize,
    pub desc_a: Vec<f64>,
    pub desc_b: Vec<f64>,
    pub att_a: Vec<f64>,
    pub att_b: Vec<f64>,
}

impl CorrespondenceBatch {
    /// Batch without point coordinates, for loss-only use.
    pub fn from_descriptors(
        dim: usize,
        desc_a: Vec<f64>,
        desc_b: Vec<f64>,
        att_a: Vec<f64>,
        att_b: Vec<f64>,
    ) -> Result<Self> {
        let batch = Self {
            points_a: Vec::new(),
            points_b: Vec::new(),
            dim,
            desc_a,
            desc_b,
            att_a,
            att_b,
        };
        batch.check_layout()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.att_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.att_a.is_empty()
    }

    fn check_layout(&self) -> Result<()> {
        let n = self.att_a.len();
        if self.dim == 0
            || self.att_b.len() != n
            || self.desc_a.len() != n * self.dim
            || self.desc_b.len() != n * self.dim
        {
            return Err(Error::Shape(format!(
                "inconsistent batch: {} / {} attention values, {} / {} descriptor values, dim {}",
                n,
                self.att_b.len(),
                self.desc_a.len(),
                self.desc_b.len(),
                self.dim
            )));
        }
        if !self.points_a.is_empty() && (self.points_a.len() != n || self.points_b.len() != n) {
            return Err(Error::Shape("point lists do not match the batch size".into()));
        }
        Ok(())
    }

    /// Full invariant check: layout, `N >= 2`, unit-norm rows (1e-4),
    /// positive finite attention.
    pub fn validate(&self) -> Result<()> {
        self.check_layout()?;
        if self.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: self.len(),
            });
        }
        self.check_finite()?;
        for (side, desc) in [("a", &self.desc_a), ("b", &self.desc_b)] {
            for (i, row) in desc.chunks_exact(self.dim).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::InvalidValue(format!(
                        "descriptor {i} of side {side} has norm {norm}"
                    )));
                }
            }
        }
        if let Some(v) = self.att_a.iter().chain(&self.att_b).find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidValue(format!("attention must be > 0, got {v}")));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let all = self
            .desc_a
            .iter()
            .chain(&self.desc_b)
            .chain(&self.att_a)
            .chain(&self.att_b);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("correspondence batch".into()));
        }
        Ok(())
    }

    /// Row `i` of `w_a · d_a`.
    pub fn weighted_a(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let w = self.att_a[i];
        self.desc_a[i * self.dim..(i + 1) * self.dim].iter().map(move |v| w * v)
    }

    pub fn weighted_b(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let w = self.att_b[j];
        self.desc_b[j * self.dim..(j + 1) * self.dim].iter().map(move |v| w * v)
    }

    fn cross_distance(&self, i: usize, j: usize) -> f64 {
        self.weighted_a(i)
            .zip(self.weighted_b(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `||w_i d_i - w'_i d'_i||` for every correspondence.
pub fn positive_distances(batch: &CorrespondenceBatch) -> Vec<f64> {
    (0..batch.len()).map(|i| batch.cross_distance(i, i)).collect()
}

/// Index and distance of the closest non-matching weighted descriptor of the
/// other image, for every anchor. Ties resolve to the lowest index.
pub fn hardest_negatives(batch: &CorrespondenceBatch) -> Result<Vec<(usize, f64)>> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let dim = batch.dim;
    let xb: Vec<f64> = (0..n).flat_map(|j| batch.weighted_b(j)).collect();
    let mut out = Vec::with_capacity(n);
    let mut xa = vec![0.0; dim];
    for i in 0..n {
        for (slot, v) in xa.iter_mut().zip(batch.weighted_a(i)) {
            *slot = v;
        }
        // squared distances compared exactly; a partial sum that already
        // reaches the best can never win under the strict comparison
        let mut best = (usize::MAX, f64::INFINITY);
        for j in (0..n).filter(|&j| j != i) {
            let row = &xb[j * dim..(j + 1) * dim];
            let mut sq = 0.0;
            for (a, b) in xa.iter().zip(row) {
                sq += (a - b) * (a - b);
                if sq >= best.1 {
                    break;
                }
            }
            if sq < best.1 {
                best = (j, sq);
            }
        }
        out.push((best.0, best.1.sqrt()));
    }
    Ok(out)
}

pub fn hardest_negative_distances(batch: &CorrespondenceBatch) -> Result<Vec<f64>> {
    Ok(hardest_negatives(batch)?.into_iter().map(|(_, d)| d).collect())
}

/// `exp(w_i / T) / Σ_k exp(w_k / T)`, shifted by the max for stability.
pub fn softmax_weights(att: &[f64], temperature: f64) -> Vec<f64> {
    let max = att.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = att.iter().map(|w| ((w - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-anchor hinge terms `max(0, pos - neg + margin)`.
pub fn triplet_terms(batch: &CorrespondenceBatch, margin: f64) -> Result<Vec<f64>> {
    let pos = positive_distances(batch);
    let neg = hardest_negative_distances(batch)?;
    Ok(pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| (p - n + margin).max(0.0))
        .collect())
}

pub fn atrip_loss(batch: &CorrespondenceBatch, cfg: &LossConfig) -> Result<f64> {
    batch.check_layout()?;
    batch.check_finite()?;
    cfg.validate()?;
    let terms = triplet_terms(batch, cfg.margin)?;
    let weights = softmax_weights(&batch.att_a, cfg.temperature);
    Ok(weights.iter().zip(&terms).map(|(w, t)| w * t).sum())
}

/// Per-anchor quantities produced by [`atrip_loss_tensor`], detached.
#[derive(Debug, Clone)]
pub struct TripletStats {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub negative_index: Vec<usize>,
}

fn row_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.sum(D::Minus1)?.affine(1.0, 1e-12)?.sqrt()?)
}

/// Differentiable loss over `(N, dim)` descriptors and `(N,)` attention.
///
/// Hardest negatives are mined on detached values with the same rule as
/// [`hardest_negatives`]; gradients then flow through the selected pairs.
pub fn atrip_loss_tensor(
    desc_a: &Tensor,
    desc_b: &Tensor,
    att_a: &Tensor,
    att_b: &Tensor,
    cfg: &LossConfig,
) -> Result<(Tensor, TripletStats)> {
    let (n, dim) = desc_a.dims2()?;
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if desc_b.dims2()? != (n, dim) || att_a.dims1()? != n || att_b.dims1()? != n {
        return Err(Error::Shape("mismatched correspondence tensors".into()));
    }
    let x = desc_a.broadcast_mul(&att_a.unsqueeze(1)?)?;
    let xp = desc_b.broadcast_mul(&att_b.unsqueeze(1)?)?;

    let to_vec = |t: &Tensor| -> Result<Vec<f64>> {
        Ok(t.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
    };
    let mined = CorrespondenceBatch::from_descriptors(
        dim,
        to_vec(desc_a)?,
        to_vec(desc_b)?,
        to_vec(att_a)?,
        to_vec(att_b)?,
    )?;
    mined.check_finite()?;
    let negatives = hardest_negatives(&mined)?;
    let idx: Vec<u32> = negatives.iter().map(|(j, _)| *j as u32).collect();
    let idx = Tensor::from_vec(idx, n, desc_a.device())?;
    let xn = xp.index_select(&idx, 0)?;

    let pos = row_distance(&x, &xp)?;
    let neg = row_distance(&x, &xn)?;
    let hinge = (&pos - &neg)?.affine(1.0, cfg.margin)?.relu()?;
    let max = att_a.max_keepdim(0)?.detach();
    let e = att_a
        .broadcast_sub(&max)?
        .affine(1.0 / cfg.temperature, 0.0)?
        .exp()?;
    let weights = e.broadcast_div(&e.sum_keepdim(0)?)?;
    let loss = (weights * hinge)?.sum_all()?;

    let stats = TripletStats {
        positive: to_vec(&pos)?,
        negative: to_vec(&neg)?,
        negative_index: negatives.iter().map(|(j, _)| *j).collect(),
    };
    Ok((loss, stats))
}

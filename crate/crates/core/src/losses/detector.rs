use candle_core::Tensor;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-6;

/// `-λ g log k - (1 - g) log(1 - k)` with clamped `k`.
pub fn weighted_bce(k: f64, g: f64, lambda: f64) -> f64 {
    let k = k.clamp(EPS, 1.0 - EPS);
    -lambda * g * k.ln() - (1.0 - g) * (1.0 - k).ln()
}

/// Mean weighted BCE over all pixels of a predicted heatmap and its labels.
pub fn detector_loss(k: &[f32], g: &[f32], lambda: f64) -> Result<f64> {
    if k.len() != g.len() {
        return Err(Error::Shape(format!(
            "heatmap has {} pixels but labels have {}",
            k.len(),
            g.len()
        )));
    }
    if k.is_empty() {
        return Err(Error::Shape("empty heatmap".into()));
    }
    let sum: f64 = k
        .iter()
        .zip(g)
        .map(|(&k, &g)| weighted_bce(k as f64, g as f64, lambda))
        .sum();
    Ok(sum / k.len() as f64)
}

/// Differentiable version over `(b, 1, h, w)` probability and label tensors,
/// averaged over every pixel of the batch.
pub fn detector_loss_tensor(prob: &Tensor, labels: &Tensor, lambda: f64) -> Result<Tensor> {
    if prob.dims() != labels.dims() {
        return Err(Error::Shape(format!(
            "heatmap shape {:?} vs labels {:?}",
            prob.dims(),
            labels.dims()
        )));
    }
    let k = prob.clamp(EPS, 1.0 - EPS)?;
    let pos = (labels * k.log()?)?.affine(-lambda, 0.0)?;
    let neg = (labels.affine(-1.0, 1.0)? * k.affine(-1.0, 1.0)?.log()?)?.neg()?;
    Ok((pos + neg)?.mean_all()?)
}

/// `L_det + L_des`, unweighted.
pub fn total_loss(l_det: f64, l_des: f64) -> Result<f64> {
    if !l_det.is_finite() || !l_des.is_finite() {
        return Err(Error::NonFinite(format!("l_det = {l_det}, l_des = {l_des}")));
    }
    Ok(l_det + l_des)
}

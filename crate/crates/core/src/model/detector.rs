use candle_core::Tensor;

use super::backbone::FeaturePyramid;
use super::ops;
use super::params::{Conv2d, ParamStore};
use crate::config::FusionMode;
use crate::error::Result;

/// Detector outputs for one batch.
#[derive(Debug, Clone)]
pub struct KeypointHeatmaps {
    /// Single-channel logits at the native resolution of C1..C4.
    pub per_scale_logits: Vec<Tensor>,
    /// The same logits resampled to the input size.
    pub upsampled_logits: Vec<Tensor>,
    /// Effective fusion weights (after softmax in softmax mode).
    pub fusion_weights: Tensor,
    pub fused_logits: Tensor,
    /// `sigmoid(fused_logits)`, `(b, 1, h, w)`.
    pub prob: Tensor,
}

/// One 3x3 conv + ReLU + 1x1 conv header per pyramid level, fused by four
/// learnable scalars.
pub struct DetectorHead {
    headers: Vec<(Conv2d, Conv2d)>,
    fusion: Tensor,
    mode: FusionMode,
}

impl DetectorHead {
    pub fn new(ps: &mut ParamStore, widths: [usize; 4], mode: FusionMode) -> Result<Self> {
        let headers = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Ok((
                    Conv2d::new(ps, &format!("detect.header{}.conv", i + 1), c, c, 3, 1)?,
                    Conv2d::new(ps, &format!("detect.header{}.out", i + 1), c, 1, 1, 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let init = match mode {
            FusionMode::Softmax => 0.0,
            FusionMode::Raw => 0.25,
        };
        let fusion = ps.constant("detect.fusion".into(), &[4], init)?;
        Ok(Self {
            headers,
            fusion,
            mode,
        })
    }

    pub fn effective_weights(&self) -> Result<Tensor> {
        match self.mode {
            FusionMode::Softmax => ops::softmax_last(&self.fusion),
            FusionMode::Raw => Ok(self.fusion.clone()),
        }
    }

    pub fn forward(&self, pyramid: &FeaturePyramid, h: usize, w: usize) -> Result<KeypointHeatmaps> {
        let mut per_scale = Vec::with_capacity(4);
        let mut upsampled = Vec::with_capacity(4);
        for ((conv, out), level) in self.headers.iter().zip(pyramid.levels()) {
            let logits = out.forward(&conv.forward(level)?.relu()?)?;
            upsampled.push(ops::resize_bilinear(&logits, h, w)?);
            per_scale.push(logits);
        }
        let weights = self.effective_weights()?;
        let fused = fuse(&upsampled, &weights)?;
        let prob = ops::sigmoid(&fused)?;
        Ok(KeypointHeatmaps {
            per_scale_logits: per_scale,
            upsampled_logits: upsampled,
            fusion_weights: weights,
            fused_logits: fused,
            prob,
        })
    }
}

/// `Σ_i weights[i] · logits[i]` over the four upsampled logit maps.
pub fn fuse(logits: &[Tensor], weights: &Tensor) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (i, l) in logits.iter().enumerate() {
        let wi = weights.narrow(0, i, 1)?.reshape((1, 1, 1, 1))?;
        let term = l.broadcast_mul(&wi)?;
        acc = Some(match acc {
            None => term,
            Some(a) => (a + term)?,
        });
    }
    Ok(acc.expect("four detector scales"))
}

use candle_core::Tensor;

use super::backbone::FeaturePyramid;
use super::global_context::GlobalContext;
use super::ops;
use super::params::{Conv2d, ParamStore};
use crate::config::ModelConfig;
use crate::error::Result;

/// Dense descriptors at 1/4 input resolution.
#[derive(Debug, Clone)]
pub struct DenseDescriptorField {
    /// Raw descriptors: 3x3 conv of `c_cat` plus the gated global context.
    pub d_raw: Tensor,
    /// Final unit-length descriptors `(b, dim, h/4, w/4)`.
    pub d: Tensor,
    /// All four pyramid levels resampled to 1/4 and concatenated.
    pub c_cat: Tensor,
}

/// Strictly positive per-pixel attention `(b, 1, h/4, w/4)`.
#[derive(Debug, Clone)]
pub struct AttentionField {
    pub w: Tensor,
}

/// Context-aggregation descriptor head plus the attention branch.
pub struct DescriptorHead {
    raw: Conv2d,
    /// 1x1 branch followed by the three dilated 3x3 branches.
    branches: Vec<Conv2d>,
    attention: Conv2d,
}

impl DescriptorHead {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let cat = cfg.cat_channels();
        let sub = cfg.sub_descriptor_dim;
        let raw = Conv2d::new(ps, "describe.raw", cat, cfg.descriptor_dim, 3, 1)?;
        let mut branches = vec![Conv2d::new(ps, "describe.branch0", cat, sub, 1, 1)?];
        for (i, &rate) in cfg.dilation_rates.iter().enumerate() {
            branches.push(Conv2d::new(
                ps,
                &format!("describe.branch{}", i + 1),
                cat,
                sub,
                3,
                rate,
            )?);
        }
        let attention = Conv2d::new(ps, "describe.attention", 1, 1, 3, 1)?;
        Ok(Self {
            raw,
            branches,
            attention,
        })
    }

    /// Resamples every pyramid level to `(h/4, w/4)` and concatenates them.
    pub fn aggregate(pyramid: &FeaturePyramid) -> Result<Tensor> {
        let (_, _, h4, w4) = pyramid.c3.dims4()?;
        let levels = pyramid
            .levels()
            .into_iter()
            .map(|t| ops::resize_bilinear(t, h4, w4))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&levels, 1)?)
    }

    /// The four sub-descriptor branches concatenated along channels.
    pub fn local_context(&self, c_cat: &Tensor) -> Result<Tensor> {
        let parts = self
            .branches
            .iter()
            .map(|b| b.forward(c_cat))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    }

    pub fn attention(&self, c_cat: &Tensor) -> Result<AttentionField> {
        let mean = c_cat.mean_keepdim(1)?;
        Ok(AttentionField {
            w: ops::softplus(&self.attention.forward(&mean)?)?,
        })
    }

    pub fn forward(
        &self,
        pyramid: &FeaturePyramid,
        global: &GlobalContext,
    ) -> Result<(DenseDescriptorField, AttentionField)> {
        let c_cat = Self::aggregate(pyramid)?;
        let d_raw = (self.raw.forward(&c_cat)? + global.merged()?)?;
        let fused = (&d_raw + self.local_context(&c_cat)?)?;
        let d = ops::l2_normalize(&fused, 1)?;
        let attention = self.attention(&c_cat)?;
        Ok((DenseDescriptorField { d_raw, d, c_cat }, attention))
    }
}

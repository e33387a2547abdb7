//! Adaptive global context branch.
//!
//! The coarsest feature map is pooled to a fixed square, cut into patches,
//! embedded with learned positions and run through a pre-norm transformer.
//! The resulting patch grid is upsampled to descriptor resolution. A second,
//! convolutional branch predicts a non-negative gate that decides where the
//! context is injected.

use candle_core::Tensor;

use super::ops;
use super::params::{Conv2d, LayerNorm, Linear, ParamStore};
use crate::config::ModelConfig;
use crate::error::Result;

struct TransformerBlock {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl TransformerBlock {
    fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), dim)?,
            qkv: Linear::new(ps, &format!("{name}.attn.qkv"), dim, 3 * dim)?,
            proj: Linear::new(ps, &format!("{name}.attn.proj"), dim, dim)?,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), dim)?,
            fc1: Linear::new(ps, &format!("{name}.mlp.fc1"), dim, hidden)?,
            fc2: Linear::new(ps, &format!("{name}.mlp.fc2"), hidden, dim)?,
            heads,
        })
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, dim) = x.dims3()?;
        let dh = dim / self.heads;
        let qkv = self.qkv.forward(x)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * dim, dim)?
                .reshape((b, n, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = q
            .matmul(&k.t()?.contiguous()?)?
            .affine(1.0 / (dh as f64).sqrt(), 0.0)?;
        let attn = ops::softmax_last(&scores)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, n, dim))?;
        self.proj.forward(&out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attention(&self.norm1.forward(x)?)?)?;
        let h = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu()?;
        Ok((&x + self.fc2.forward(&h)?)?)
    }
}

/// Output of the global context branch, at descriptor resolution.
#[derive(Debug, Clone)]
pub struct GlobalContext {
    /// `(b, descriptor_dim, h/4, w/4)` upsampled patch-grid descriptors.
    pub context: Tensor,
    /// `(b, 1, h/4, w/4)` ReLU gate, zero where no context is injected.
    pub gate: Tensor,
}

impl GlobalContext {
    /// `gate ⊙ context`, the term added to the raw descriptors.
    pub fn merged(&self) -> Result<Tensor> {
        Ok(self.context.broadcast_mul(&self.gate)?)
    }
}

pub struct GlobalContextModule {
    pool: usize,
    patch: usize,
    embed_dim: usize,
    patch_embed: Linear,
    pos_embed: Tensor,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    out_proj: Option<Linear>,
    gate: Conv2d,
}

impl GlobalContextModule {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let c4 = cfg.backbone_channels[3];
        let dim = cfg.agca_embed_dim;
        let patch_len = c4 * cfg.agca_patch_size * cfg.agca_patch_size;
        let patch_embed = Linear::new(ps, "agca.patch_embed", patch_len, dim)?;
        let pos_embed = ps.trunc_normal("agca.pos_embed".into(), &[1, cfg.token_count(), dim], 0.02)?;
        let blocks = (0..cfg.agca_depth)
            .map(|i| {
                TransformerBlock::new(
                    ps,
                    &format!("agca.blocks.{i}"),
                    dim,
                    cfg.agca_heads,
                    cfg.mlp_hidden(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(ps, "agca.norm", dim)?;
        let out_proj = if dim != cfg.descriptor_dim {
            Some(Linear::new(ps, "agca.out_proj", dim, cfg.descriptor_dim)?)
        } else {
            None
        };
        let gate = Conv2d::new(ps, "agca.gate", c4, 1, 3, 1)?;
        Ok(Self {
            pool: cfg.agca_pool_size,
            patch: cfg.agca_patch_size,
            embed_dim: dim,
            patch_embed,
            pos_embed,
            blocks,
            norm,
            out_proj,
            gate,
        })
    }

    /// Pools `c4` to `pool x pool` and returns flattened patches
    /// `(b, tokens, c * patch * patch)`.
    pub fn patches(&self, c4: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = c4.dims4()?;
        let pooled = ops::adaptive_avg_pool(c4, self.pool, self.pool)?;
        let g = self.pool / self.patch;
        let p = self.patch;
        Ok(pooled
            .reshape(vec![b, c, g, p, g, p])?
            .permute(vec![0, 2, 4, 1, 3, 5])?
            .contiguous()?
            .reshape((b, g * g, c * p * p))?)
    }

    /// Patch embeddings plus position embeddings, the transformer input.
    pub fn embed(&self, c4: &Tensor) -> Result<Tensor> {
        let tokens = self.patch_embed.forward(&self.patches(c4)?)?;
        Ok(tokens.broadcast_add(&self.pos_embed)?)
    }

    /// Transformer output tokens `(b, tokens, embed_dim)`.
    pub fn encode_tokens(&self, c4: &Tensor) -> Result<Tensor> {
        let mut z = self.embed(c4)?;
        for block in &self.blocks {
            z = block.forward(&z)?;
        }
        self.norm.forward(&z)
    }

    pub fn forward(&self, c4: &Tensor, out_h: usize, out_w: usize) -> Result<GlobalContext> {
        let (b, _, _, _) = c4.dims4()?;
        let g = self.pool / self.patch;
        let mut z = self.encode_tokens(c4)?;
        if let Some(proj) = &self.out_proj {
            z = proj.forward(&z)?;
        }
        let dim = z.dim(2)?;
        let grid = z
            .reshape((b, g, g, dim))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        let context = ops::resize_bilinear(&grid, out_h, out_w)?;
        let gate = self.gate.forward(c4)?;
        let gate = ops::resize_bilinear(&gate, out_h, out_w)?.relu()?;
        Ok(GlobalContext { context, gate })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }
}

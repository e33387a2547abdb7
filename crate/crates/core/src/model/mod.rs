//! The joint detection / description network.
//!
//! One shared backbone produces a four-level feature pyramid. The descriptor
//! head aggregates every level at 1/4 resolution, adds gated transformer
//! context and four multi-rate sub-descriptor branches, and predicts a
//! positive attention map. The detector head predicts one heatmap per level
//! and fuses them at full resolution.

pub mod backbone;
pub mod checkpoint;
pub mod descriptor;
pub mod detector;
pub mod global_context;
pub mod ops;
pub mod params;

use candle_core::{Device, Tensor};

pub use backbone::FeaturePyramid;
pub use checkpoint::Checkpoint;
pub use descriptor::{AttentionField, DenseDescriptorField};
pub use detector::KeypointHeatmaps;
pub use global_context::GlobalContext;
pub use params::ParamStore;

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub descriptors: DenseDescriptorField,
    pub attention: AttentionField,
    pub global: GlobalContext,
    pub heatmaps: KeypointHeatmaps,
}

pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    backbone: backbone::Backbone,
    global: global_context::GlobalContextModule,
    descriptor: descriptor::DescriptorHead,
    detector: detector::DetectorHead,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, device);
        let backbone = backbone::Backbone::new(&mut ps, cfg.in_channels, cfg.backbone_channels)?;
        let global = global_context::GlobalContextModule::new(&mut ps, cfg)?;
        let descriptor = descriptor::DescriptorHead::new(&mut ps, cfg)?;
        let detector = detector::DetectorHead::new(&mut ps, cfg.backbone_channels, cfg.fusion)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            backbone,
            global,
            descriptor,
            detector,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Checks the `(b, c, h, w)` input contract.
    pub fn check_input(&self, image: &Tensor) -> Result<(usize, usize)> {
        let (_, c, h, w) = image
            .dims4()
            .map_err(|_| Error::Shape(format!("expected (b, c, h, w) input, got {:?}", image.dims())))?;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channel(s), got {c}",
                self.cfg.in_channels
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!(
                "input size {h}x{w} is not divisible by 8"
            )));
        }
        if h < 32 || w < 32 {
            return Err(Error::Shape(format!(
                "input size {h}x{w} is below the 32x32 minimum"
            )));
        }
        Ok((h, w))
    }

    pub fn encode(&self, image: &Tensor) -> Result<FeaturePyramid> {
        self.check_input(image)?;
        self.backbone.forward(&params::ensure_f32(image)?)
    }

    /// Global context and gate at `(out_h, out_w)` computed from `c4`.
    pub fn agca(&self, c4: &Tensor, out_h: usize, out_w: usize) -> Result<GlobalContext> {
        self.global.forward(c4, out_h, out_w)
    }

    /// Transformer input tokens `Z0` for a given `c4`.
    pub fn agca_tokens(&self, c4: &Tensor) -> Result<Tensor> {
        self.global.embed(c4)
    }

    pub fn describe(&self, pyramid: &FeaturePyramid) -> Result<(DenseDescriptorField, AttentionField, GlobalContext)> {
        let (_, _, h4, w4) = pyramid.c3.dims4()?;
        let global = self.agca(&pyramid.c4, h4, w4)?;
        let (d, w) = self.descriptor.forward(pyramid, &global)?;
        Ok((d, w, global))
    }

    pub fn detect(&self, pyramid: &FeaturePyramid) -> Result<KeypointHeatmaps> {
        let (_, _, h, w) = pyramid.c1.dims4()?;
        self.detector.forward(pyramid, h, w)
    }

    pub fn forward(&self, image: &Tensor) -> Result<ModelOutput> {
        let pyramid = self.encode(image)?;
        self.heads(&pyramid)
    }

    /// Runs both heads on an already encoded pyramid.
    pub fn heads(&self, pyramid: &FeaturePyramid) -> Result<ModelOutput> {
        let (descriptors, attention, global) = self.describe(pyramid)?;
        let heatmaps = self.detect(pyramid)?;
        Ok(ModelOutput {
            descriptors,
            attention,
            global,
            heatmaps,
        })
    }

    /// Resets the parameters whose names start with any of `prefixes` to a
    /// fresh initialisation drawn from `seed`.
    pub fn reinitialize(&self, prefixes: &[&str], seed: u64) -> Result<()> {
        let fresh = Self::new(&self.cfg, seed, self.device())?;
        for (name, var) in self.params.select(prefixes) {
            let src = fresh.params.get(&name).expect("same config, same names");
            var.set(src.as_tensor())?;
        }
        Ok(())
    }

    /// Builds a checkpoint holding the config and a copy of every parameter.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.cfg.clone());
        for (name, var) in self.params.iter() {
            ck.push(name, var.as_tensor())?;
        }
        Ok(ck)
    }

    /// Overwrites parameters from a checkpoint with a matching config.
    pub fn load_checkpoint(&self, ck: &Checkpoint) -> Result<()> {
        if ck.model != self.cfg {
            return Err(Error::Config(
                "checkpoint model config differs from this model".into(),
            ));
        }
        for (name, var) in self.params.iter() {
            let t = ck
                .tensor(name, self.device())?
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t)?;
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let model = Self::new(&ck.model, 0, device)?;
        model.load_checkpoint(ck)?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &std::path::Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?, device)
    }
}

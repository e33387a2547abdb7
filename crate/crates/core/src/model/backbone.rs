use candle_core::Tensor;

use super::params::{Conv2d, ParamStore};
use crate::error::Result;

/// The four backbone feature maps at resolutions 1, 1/2, 1/4 and 1/8.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub c1: Tensor,
    pub c2: Tensor,
    pub c3: Tensor,
    pub c4: Tensor,
}

impl FeaturePyramid {
    pub fn levels(&self) -> [&Tensor; 4] {
        [&self.c1, &self.c2, &self.c3, &self.c4]
    }

    /// Cuts the pyramid from the autodiff graph.
    pub fn detach(&self) -> Self {
        Self {
            c1: self.c1.detach(),
            c2: self.c2.detach(),
            c3: self.c3.detach(),
            c4: self.c4.detach(),
        }
    }
}

/// Four sequential sub-encoders of two 3x3 conv + ReLU layers each, with a
/// 2x2 max-pool in front of every stage but the first.
pub struct Backbone {
    stages: Vec<[Conv2d; 2]>,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, in_channels: usize, widths: [usize; 4]) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let a = Conv2d::new(ps, &format!("backbone.stage{}.conv0", i + 1), cin, w, 3, 1)?;
            let b = Conv2d::new(ps, &format!("backbone.stage{}.conv1", i + 1), w, w, 3, 1)?;
            stages.push([a, b]);
            cin = w;
        }
        Ok(Self { stages })
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let mut maps = Vec::with_capacity(4);
        let mut x = image.clone();
        for (i, [a, b]) in self.stages.iter().enumerate() {
            if i > 0 {
                x = x.max_pool2d(2)?;
            }
            x = a.forward(&x)?.relu()?;
            x = b.forward(&x)?.relu()?;
            maps.push(x.clone());
        }
        let c4 = maps.pop().unwrap();
        let c3 = maps.pop().unwrap();
        let c2 = maps.pop().unwrap();
        let c1 = maps.pop().unwrap();
        Ok(FeaturePyramid { c1, c2, c3, c4 })
    }
}

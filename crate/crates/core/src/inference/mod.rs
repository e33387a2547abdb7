//! Keypoint extraction, descriptor sampling and mutual nearest-neighbour
//! matching.

pub mod features;
pub mod keypoints;
pub mod matching;
pub mod sampling;

use candle_core::Tensor;

pub use features::KeypointSet;
pub use keypoints::{extract_keypoints, render_keypoints, Keypoint};
pub use matching::{match_features, Match, MatchSet};
pub use sampling::{sample_at_keypoints, DenseMap};

use crate::config::InferenceConfig;
use crate::data::Raster;
use crate::error::{Error, Result};
use crate::model::{ops, Model};

/// Dense network outputs of one image, detached from the graph.
#[derive(Debug, Clone)]
pub struct DenseOutputs {
    pub heatmap: Raster,
    pub descriptors: DenseMap,
    pub attention: DenseMap,
}

pub fn image_tensor(image: &Raster, model: &Model) -> Result<Tensor> {
    ops::plane_tensor(&image.data, image.height, image.width, model.device())
}

/// Runs the network on an image whose sides are multiples of 8.
pub fn dense_outputs(model: &Model, image: &Raster) -> Result<DenseOutputs> {
    let out = model.forward(&image_tensor(image, model)?)?;
    let prob = out.heatmaps.prob.flatten_all()?.to_vec1::<f32>()?;
    if prob.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("keypoint heatmap".into()));
    }
    Ok(DenseOutputs {
        heatmap: Raster::from_vec(image.width, image.height, prob)?,
        descriptors: DenseMap::from_tensor(&out.descriptors.d)?,
        attention: DenseMap::from_tensor(&out.attention.w)?,
    })
}

/// Keypoints, descriptors and weights from dense outputs.
pub fn features_from_dense(dense: &DenseOutputs, name: &str, cfg: &InferenceConfig) -> Result<KeypointSet> {
    let kps = extract_keypoints(&dense.heatmap, cfg.alpha, cfg.nms_radius, cfg.max_keypoints);
    let coords: Vec<[f64; 2]> = kps.iter().map(|k| [k.x as f64, k.y as f64]).collect();
    let (descriptors, weights) = sample_at_keypoints(&dense.descriptors, &dense.attention, &coords)?;
    Ok(KeypointSet {
        image: name.to_string(),
        height: dense.heatmap.height,
        width: dense.heatmap.width,
        dim: dense.descriptors.channels,
        coords,
        scores: kps.iter().map(|k| k.score).collect(),
        descriptors,
        weights,
    })
}

/// Full extraction; the image is first cropped to multiples of 8.
pub fn extract_features(model: &Model, image: &Raster, name: &str, cfg: &InferenceConfig) -> Result<KeypointSet> {
    let image = image.crop_to_multiple(8)?;
    let dense = dense_outputs(model, &image)?;
    features_from_dense(&dense, name, cfg)
}

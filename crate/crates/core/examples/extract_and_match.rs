//! Extracts features from both views of a synthetic pair and matches them
//! with both distances. Pass a checkpoint to use trained weights.
//!
//! cargo run --example extract_and_match -- [checkpoint]

use candle_core::Device;
use ctxfeat::config::{MatchMode, RunConfig};
use ctxfeat::data::synthetic_sample;
use ctxfeat::eval::matching_score;
use ctxfeat::inference::{extract_features, match_features};
use ctxfeat::model::Model;

fn main() -> ctxfeat::Result<()> {
    let mut cfg = RunConfig::toy();
    let model = match std::env::args().nth(1) {
        Some(p) => Model::load(p.as_ref(), &Device::Cpu)?,
        None => {
            // an untrained detector rarely clears 0.9
            cfg.inference.alpha = 0.0;
            cfg.inference.max_keypoints = 300;
            Model::new(&cfg.model, 0, &Device::Cpu)?
        }
    };
    let s = synthetic_sample(5, &cfg.data)?;
    let a = extract_features(&model, &s.pair.image_a, "a", &cfg.inference)?;
    let b = extract_features(&model, &s.pair.image_b, "b", &cfg.inference)?;
    println!("{} and {} keypoints", a.len(), b.len());
    for mode in [MatchMode::Plain, MatchMode::AttentionWeighted] {
        let m = match_features(&a, &b, mode);
        let ms = matching_score(&a, &b, &m.pairs, &s.pair.homography, 3.0);
        println!("{mode:?}: {} mutual matches, M.S. {ms:?}", m.len());
    }
    Ok(())
}

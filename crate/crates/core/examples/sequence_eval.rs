//! Writes a small sequence set (reference image plus warped targets and
//! `H_1_k` files), reloads it and scores a model on it in both modes.
//!
//! cargo run --example sequence_eval -- [checkpoint]

use candle_core::Device;
use ctxfeat::config::{HomographyParams, MatchMode, RunConfig};
use ctxfeat::data::pair::warp_view;
use ctxfeat::data::{Homography, Raster, Scene};
use ctxfeat::eval::{extract_sequence_pairs, hpatches, report_from_features};
use ctxfeat::model::Model;

fn main() -> ctxfeat::Result<()> {
    let mut cfg = RunConfig::toy();
    let model = match std::env::args().nth(1) {
        Some(p) => Model::load(p.as_ref(), &Device::Cpu)?,
        None => {
            cfg.inference.alpha = 0.0;
            cfg.inference.max_keypoints = 200;
            Model::new(&cfg.model, 0, &Device::Cpu)?
        }
    };
    let root = tempfile_root();
    let (w, h) = (160, 128);
    for (i, name) in ["v_shapes_a", "v_shapes_b"].iter().enumerate() {
        let canvas = Scene::random(w, h, 40 + i as u64).render();
        let mut images: Vec<Raster> = vec![canvas.clone()];
        let mut hs = Vec::new();
        for k in 0..3u64 {
            let hk = Homography::random(100 * i as u64 + k, &HomographyParams::default(), w, h)?;
            images.push(warp_view(&canvas, &hk, [0, 0], w, h));
            hs.push(hk);
        }
        let refs: Vec<&Raster> = images.iter().collect();
        hpatches::write_sequence(&root, name, &refs, &hs)?;
    }
    let (seqs, skipped) = hpatches::load_dataset(&root, None)?;
    let pairs = extract_sequence_pairs(&model, &seqs, &cfg.inference)?;
    for mode in [MatchMode::Plain, MatchMode::AttentionWeighted] {
        print!("{}", report_from_features(&pairs, mode, &cfg.eval, skipped.clone()).to_table());
    }
    Ok(())
}

fn tempfile_root() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("ctxfeat_sequence_eval");
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

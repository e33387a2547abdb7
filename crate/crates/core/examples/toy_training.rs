//! Trains the quarter-width model on synthetic shape pairs and evaluates it
//! on held-out pairs in both matching modes.
//!
//! cargo run --release --example toy_training -- [epochs] [pairs] [checkpoint-out]

use std::time::Instant;

use candle_core::Device;
use ctxfeat::config::{DataConfig, MatchMode, RunConfig};
use ctxfeat::data::{generate_samples, split_seed};
use ctxfeat::eval::{extract_sample_pairs, report_from_features};
use ctxfeat::model::Model;
use ctxfeat::train::{attention_consistency, TrainScope, Trainer};

fn main() -> ctxfeat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let args: Vec<usize> = raw.iter().take(2).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = RunConfig::toy();
    if let Some(&e) = args.first() {
        cfg.optim.epochs = e;
    }
    if let Some(&p) = args.get(1) {
        cfg.data.pairs = p;
    }
    let t0 = Instant::now();
    let train = generate_samples(&cfg.data, 0, cfg.data.pairs)?;
    let held_cfg = DataConfig {
        seed: split_seed(cfg.data.seed, 77),
        ..cfg.data.clone()
    };
    let held = generate_samples(&held_cfg, 0, 50)?;
    println!("data ready in {:.1}s", t0.elapsed().as_secs_f64());

    let model = Model::new(&cfg.model, cfg.data.seed, &Device::Cpu)?;
    let before = attention_consistency(&model, &held, &cfg)?;
    let t1 = Instant::now();
    let mut trainer = Trainer::new(&model, &cfg, &train, TrainScope::Full)?;
    trainer.run(None)?;
    println!("trained {} steps in {:.1}s", trainer.step, t1.elapsed().as_secs_f64());
    let after = attention_consistency(&model, &held, &cfg)?;
    println!("attention consistency: {before:.4} -> {after:.4}");
    if let Some(path) = raw.get(2) {
        model.save(path.as_ref())?;
    }

    let pairs = extract_sample_pairs(&model, &held, &cfg.inference)?;
    for mode in [MatchMode::Plain, MatchMode::AttentionWeighted] {
        let r = report_from_features(&pairs, mode, &cfg.eval, vec![]);
        println!(
            "{mode:?}: MMA@3 {:.3} HA@3 {:.3} M.S. {:.3} keypoints {:.1} matches {:.1}",
            r.mma_at(3.0).unwrap(),
            r.ha_at(3.0).unwrap(),
            r.overall.matching_score,
            r.overall.mean_keypoints,
            r.overall.mean_matches
        );
    }
    Ok(())
}

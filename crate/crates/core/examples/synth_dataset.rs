//! Synthesizes a small training set on disk and reads it back.
//!
//! cargo run --example synth_dataset -- <out-dir> [pairs]

use std::path::PathBuf;

use ctxfeat::config::RunConfig;
use ctxfeat::data::dataset::{read_manifest, write_dataset};
use ctxfeat::data::load_dataset;

fn main() -> ctxfeat::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example_synth".into()));
    let mut cfg = RunConfig::toy();
    cfg.data.pairs = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let summary = write_dataset(&cfg.data, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    for rec in read_manifest(&out)?.iter().take(3) {
        println!("{} seed {} coverage {:.3} H {:?}", rec.image_a, rec.seed, rec.coverage, rec.homography.to_rows());
    }
    let samples = load_dataset(&out)?;
    let positives: f64 = samples.iter().map(|s| s.labels_a.positive_fraction()).sum::<f64>() / samples.len().max(1) as f64;
    println!("loaded {} samples, mean positive label fraction {positives:.4}", samples.len());
    Ok(())
}

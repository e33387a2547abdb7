//! The attention-weighted triplet loss on a two-correspondence batch, with
//! its per-anchor terms and softmax weights at a few temperatures.
//!
//! cargo run --example loss_worked_example

use ctxfeat::config::LossConfig;
use ctxfeat::losses::gradcheck::worked_example;
use ctxfeat::losses::{atrip_loss, hardest_negatives, positive_distances, softmax_weights, triplet_terms};

fn main() -> ctxfeat::Result<()> {
    let batch = worked_example();
    let cfg = LossConfig::default();
    println!("positive distances: {:?}", positive_distances(&batch));
    println!("hardest negatives (index, distance): {:?}", hardest_negatives(&batch)?);
    println!("hinge terms (margin {}): {:?}", cfg.margin, triplet_terms(&batch, cfg.margin)?);
    for t in [0.1, 1.0, 15.0, 100.0] {
        let w = softmax_weights(&[0.2, 1.4, 0.7, 0.9], t);
        println!("softmax weights at T = {t:>5}: {w:.4?}");
    }
    println!("loss (T = {}): {:.4}", cfg.temperature, atrip_loss(&batch, &cfg)?);
    Ok(())
}

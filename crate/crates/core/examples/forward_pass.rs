//! One forward pass of the toy model: pyramid, descriptor, attention,
//! context gate and detector shapes.
//!
//! cargo run --example forward_pass

use candle_core::{Device, Tensor};
use ctxfeat::config::ModelConfig;
use ctxfeat::model::Model;

fn main() -> ctxfeat::Result<()> {
    let cfg = ModelConfig::toy();
    let model = Model::new(&cfg, 0, &Device::Cpu)?;
    let image = Tensor::rand(0f32, 1f32, (1, 1, 96, 128), &Device::Cpu)?;
    let p = model.encode(&image)?;
    println!("pyramid: {:?} {:?} {:?} {:?}", p.c1.dims(), p.c2.dims(), p.c3.dims(), p.c4.dims());
    let out = model.heads(&p)?;
    println!("descriptors: {:?}", out.descriptors.d.dims());
    let norms = out.descriptors.d.sqr()?.sum(1)?.sqrt()?.flatten_all()?.to_vec1::<f32>()?;
    let (lo, hi) = norms.iter().fold((f32::MAX, f32::MIN), |(a, b), &n| (a.min(n), b.max(n)));
    println!("descriptor norms in [{lo:.6}, {hi:.6}]");
    let w = out.attention.w.flatten_all()?.to_vec1::<f32>()?;
    let wmin = w.iter().cloned().fold(f32::MAX, f32::min);
    println!("attention: {:?}, min {wmin:.4}", out.attention.w.dims());
    println!("context {:?}, gate {:?}", out.global.context.dims(), out.global.gate.dims());
    println!("heatmap: {:?}, fusion weights {:?}", out.heatmaps.prob.dims(), out.heatmaps.fusion_weights.flatten_all()?.to_vec1::<f32>()?);
    Ok(())
}

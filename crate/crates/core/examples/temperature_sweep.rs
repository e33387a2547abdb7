//! Retrains the descriptor branch of a model at several temperatures and
//! prints MMA and matching score per temperature.
//!
//! cargo run --release --example temperature_sweep -- <checkpoint> [epochs] [pairs]

use ctxfeat::config::{DataConfig, RunConfig};
use ctxfeat::data::{generate_samples, split_seed};
use ctxfeat::model::Checkpoint;
use ctxfeat::sweep::temperature_sweep;

fn main() -> ctxfeat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let Some(ck) = args.next() else {
        eprintln!("usage: temperature_sweep <checkpoint> [epochs] [pairs]");
        std::process::exit(2);
    };
    let mut cfg = RunConfig::toy();
    cfg.optim.epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    cfg.data.pairs = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let base = Checkpoint::read(ck.as_ref())?;
    cfg.model = base.model.clone();
    let train = generate_samples(&cfg.data, 0, cfg.data.pairs)?;
    let held_cfg = DataConfig {
        seed: split_seed(cfg.data.seed, 77),
        ..cfg.data.clone()
    };
    let held = generate_samples(&held_cfg, 0, 20)?;
    let report = temperature_sweep(&base, &cfg, &train, &held, &[1.0, 15.0, 100.0])?;
    print!("{}", report.to_table());
    Ok(())
}

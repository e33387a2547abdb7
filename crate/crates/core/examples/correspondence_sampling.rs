//! Samples training correspondences from a synthetic pair's teacher
//! heatmaps and checks them against the ground-truth homography.
//!
//! cargo run --example correspondence_sampling -- [seed]

use ctxfeat::config::RunConfig;
use ctxfeat::data::{sample_correspondences, synthetic_sample};

fn main() -> ctxfeat::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = RunConfig::toy();
    let s = synthetic_sample(seed, &cfg.data)?;
    let c = sample_correspondences(&s.pair, &s.teacher, &cfg.data.sampler)?;
    println!(
        "{}x{} pair, coverage {:.3}, grid {}x{}, {} correspondences (budget {})",
        s.pair.width(),
        s.pair.height(),
        s.pair.coverage(),
        cfg.data.sampler.grid,
        cfg.data.sampler.grid,
        c.len(),
        cfg.data.sampler.n_points
    );
    let mut worst = 0.0f64;
    for (p, q) in c.points_a.iter().zip(&c.points_b) {
        let (x, y) = s.pair.homography.warp_point(p[0] as f64, p[1] as f64).expect("valid point");
        worst = worst.max((x - q[0]).hypot(y - q[1]));
    }
    println!("max |H p - p'| = {worst:.2e}");
    for ((p, q), sc) in c.points_a.iter().zip(&c.points_b).zip(&c.scores).take(5) {
        println!("  {p:?} -> [{:.2}, {:.2}] score {sc:.3}", q[0], q[1]);
    }
    Ok(())
}

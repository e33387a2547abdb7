//! Recovers a homography from correspondences with a third of them
//! replaced by outliers.
//!
//! cargo run --example robust_homography

use ctxfeat::config::HomographyParams;
use ctxfeat::data::Homography;
use ctxfeat::eval::{corner_error, estimate_homography, RansacParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ctxfeat::Result<()> {
    let (w, h) = (320, 240);
    let gt = Homography::random(7, &HomographyParams::default(), w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut src = Vec::new();
    let mut dst = Vec::new();
    while src.len() < 150 {
        let p = [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)];
        let Some((x, y)) = gt.warp_point(p[0], p[1]) else { continue };
        let q = if src.len() % 3 == 0 {
            [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)]
        } else {
            [x, y]
        };
        src.push(p);
        dst.push(q);
    }
    let fit = estimate_homography(&src, &dst, &RansacParams::default())?;
    println!("inliers {} of {}", fit.inlier_count(), src.len());
    println!("mean corner error {:.3e} px", corner_error(&fit.homography, &gt, w, h));
    Ok(())
}

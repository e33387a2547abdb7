use serde::{Deserialize, Serialize};

use crate::data::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub score: f32,
}

/// Pixels with `K >= alpha`, greedily suppressed in descending score order
/// (ties: smallest row-major index). A kept pixel removes every pixel within
/// Chebyshev distance `radius`. At most `max_kp` survive.
pub fn extract_keypoints(k: &Raster, alpha: f64, radius: usize, max_kp: usize) -> Vec<Keypoint> {
    let (w, h) = (k.width, k.height);
    // compared at the heatmap's precision so that a stored 0.9 passes alpha = 0.9
    let alpha = alpha as f32;
    let mut cand: Vec<usize> = (0..w * h).filter(|&i| k.data[i] >= alpha).collect();
    cand.sort_by(|&a, &b| k.data[b].total_cmp(&k.data[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; w * h];
    let mut out = Vec::new();
    for i in cand {
        if out.len() >= max_kp {
            break;
        }
        if suppressed[i] {
            continue;
        }
        let (x, y) = (i % w, i / w);
        out.push(Keypoint { x, y, score: k.data[i] });
        for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
            suppressed[yy * w + x.saturating_sub(radius)..yy * w + (x + radius + 1).min(w)].fill(true);
        }
    }
    out
}

/// Sparse map holding each keypoint's score and zero elsewhere.
pub fn render_keypoints(kps: &[Keypoint], width: usize, height: usize) -> Raster {
    let mut r = Raster::new(width, height);
    for kp in kps {
        r.set(kp.x, kp.y, kp.score);
    }
    r
}

use serde::{Deserialize, Serialize};

use super::ransac::{estimate_homography, RansacParams};
use crate::config::{EvalConfig, MatchMode};
use crate::data::Homography;
use crate::inference::{match_features, KeypointSet, Match};

/// Reprojection error of every match under the ground truth (a -> b).
pub fn match_errors(a: &[[f64; 2]], b: &[[f64; 2]], matches: &[Match], gt: &Homography) -> Vec<f64> {
    matches
        .iter()
        .map(|m| {
            let p = a[m.a];
            match gt.warp_point(p[0], p[1]) {
                Some((x, y)) => (x - b[m.b][0]).hypot(y - b[m.b][1]),
                None => f64::INFINITY,
            }
        })
        .collect()
}

/// Fraction of matches with error at most `t`, for every threshold. No
/// matches gives zero everywhere.
pub fn mma(a: &[[f64; 2]], b: &[[f64; 2]], matches: &[Match], gt: &Homography, thresholds: &[f64]) -> Vec<f64> {
    let errs = match_errors(a, b, matches, gt);
    thresholds
        .iter()
        .map(|&t| {
            if errs.is_empty() {
                0.0
            } else {
                errs.iter().filter(|&&e| e <= t).count() as f64 / errs.len() as f64
            }
        })
        .collect()
}

fn inside(p: (f64, f64), width: usize, height: usize) -> bool {
    p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= (width - 1) as f64 && p.1 <= (height - 1) as f64
}

/// Keypoints of `pts` whose warp lands inside a `width x height` image.
pub fn covisible(pts: &[[f64; 2]], h: &Homography, width: usize, height: usize) -> Vec<bool> {
    pts.iter()
        .map(|p| h.warp_point(p[0], p[1]).is_some_and(|q| inside(q, width, height)))
        .collect()
}

/// Correct matches over co-visible keypoints, averaged over both directions.
/// A match counts when its error is at most `t` and both ends are
/// co-visible. `None` when either image has no co-visible keypoint.
pub fn matching_score(a: &KeypointSet, b: &KeypointSet, matches: &[Match], gt: &Homography, t: f64) -> Option<f64> {
    let vis_a = covisible(&a.coords, gt, b.width, b.height);
    let vis_b = covisible(&b.coords, &gt.inverse(), a.width, a.height);
    let (na, nb) = (
        vis_a.iter().filter(|&&v| v).count(),
        vis_b.iter().filter(|&&v| v).count(),
    );
    if na == 0 || nb == 0 {
        return None;
    }
    let errs = match_errors(&a.coords, &b.coords, matches, gt);
    let correct = matches
        .iter()
        .zip(&errs)
        .filter(|(m, &e)| e <= t && vis_a[m.a] && vis_b[m.b])
        .count() as f64;
    Some(0.5 * (correct / na as f64 + correct / nb as f64))
}

/// Mean distance between the image corners mapped by `est` and by `gt`.
pub fn corner_error(est: &Homography, gt: &Homography, width: usize, height: usize) -> f64 {
    let cs = Homography::corners(width, height);
    cs.iter()
        .map(|c| match (est.warp_point(c[0], c[1]), gt.warp_point(c[0], c[1])) {
            (Some(p), Some(q)) => (p.0 - q.0).hypot(p.1 - q.1),
            _ => f64::INFINITY,
        })
        .sum::<f64>()
        / 4.0
}

/// Success flag per threshold; a failed estimate fails everywhere.
pub fn homography_accuracy(
    est: Option<&Homography>,
    gt: &Homography,
    width: usize,
    height: usize,
    thresholds: &[f64],
) -> Vec<bool> {
    match est {
        None => vec![false; thresholds.len()],
        Some(h) => {
            let e = corner_error(h, gt, width, height);
            thresholds.iter().map(|&t| e <= t).collect()
        }
    }
}

/// Everything measured on one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub name: String,
    pub kind: String,
    pub keypoints_a: usize,
    pub keypoints_b: usize,
    pub matches: usize,
    /// Matches with error at most the score threshold.
    pub correct: usize,
    pub mma: Vec<f64>,
    pub matching_score: Option<f64>,
    pub corner_error: Option<f64>,
    pub ha: Vec<bool>,
}

pub fn evaluate_pair(
    name: &str,
    kind: &str,
    a: &KeypointSet,
    b: &KeypointSet,
    gt: &Homography,
    mode: MatchMode,
    cfg: &EvalConfig,
) -> PairEvaluation {
    let set = match_features(a, b, mode);
    let errs = match_errors(&a.coords, &b.coords, &set.pairs, gt);
    let src: Vec<[f64; 2]> = set.pairs.iter().map(|m| a.coords[m.a]).collect();
    let dst: Vec<[f64; 2]> = set.pairs.iter().map(|m| b.coords[m.b]).collect();
    let params = RansacParams {
        iterations: cfg.ransac_iterations,
        threshold: cfg.ransac_threshold,
        seed: cfg.ransac_seed,
        ..RansacParams::default()
    };
    let est = estimate_homography(&src, &dst, &params).ok().map(|f| f.homography);
    PairEvaluation {
        name: name.to_string(),
        kind: kind.to_string(),
        keypoints_a: a.len(),
        keypoints_b: b.len(),
        matches: set.len(),
        correct: errs.iter().filter(|&&e| e <= cfg.score_threshold).count(),
        mma: mma(&a.coords, &b.coords, &set.pairs, gt, &cfg.thresholds),
        matching_score: matching_score(a, b, &set.pairs, gt, cfg.score_threshold),
        corner_error: est.as_ref().map(|h| corner_error(h, gt, a.width, a.height)),
        ha: homography_accuracy(est.as_ref(), gt, a.width, a.height, &cfg.thresholds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kps(coords: &[[f64; 2]], w: usize, h: usize) -> KeypointSet {
        let mut s = KeypointSet::empty("k", h, w, 1);
        for &c in coords {
            s.coords.push(c);
            s.scores.push(1.0);
            s.descriptors.push(1.0);
            s.weights.push(1.0);
        }
        s
    }

    fn diag(n: usize) -> Vec<Match> {
        (0..n).map(|i| Match { a: i, b: i, distance: 0.0 }).collect()
    }

    #[test]
    fn two_pixel_offset_straddles_thresholds() {
        let a = [[5.0, 5.0], [9.0, 3.0]];
        let b = [[7.0, 5.0], [9.0, 5.0]];
        let m = mma(&a, &b, &diag(2), &Homography::identity(), &[1.0, 3.0]);
        assert_eq!(m, vec![0.0, 1.0]);
        assert_eq!(mma(&a, &b, &[], &Homography::identity(), &[1.0]), vec![0.0]);
    }

    #[test]
    fn matching_score_counts_only_the_shared_view() {
        // b = a shifted left by 50: keypoints with x >= 50 stay visible
        let gt = Homography::translation(-50.0, 0.0);
        let pa: Vec<[f64; 2]> = (0..10).map(|i| [5.0 + 10.0 * i as f64, 20.0]).collect();
        let pb: Vec<[f64; 2]> = pa.iter().map(|p| [p[0] - 50.0, p[1]]).collect();
        let a = kps(&pa, 100, 40);
        // only the five in-view keypoints exist in b
        let b = kps(&pb[5..], 100, 40);
        let m: Vec<Match> = (0..5).map(|i| Match { a: i + 5, b: i, distance: 0.0 }).collect();
        let s = matching_score(&a, &b, &m, &gt, 3.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        assert_eq!(matching_score(&a, &b, &[], &gt, 3.0), Some(0.0));
    }

    #[test]
    fn translated_estimate_has_that_corner_error() {
        let gt = Homography::from_rows([1.0, 0.1, 2.0, 0.0, 1.0, 1.0, 1e-4, 0.0, 1.0]).unwrap();
        let est = gt.then(&Homography::translation(3.0, 4.0)).unwrap();
        assert!((corner_error(&est, &gt, 64, 48) - 5.0).abs() < 1e-9);
        assert_eq!(
            homography_accuracy(Some(&est), &gt, 64, 48, &[3.0, 10.0]),
            vec![false, true]
        );
        assert_eq!(homography_accuracy(None, &gt, 64, 48, &[3.0]), vec![false]);
    }
}

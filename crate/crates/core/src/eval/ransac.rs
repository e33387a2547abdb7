//! Robust homography fitting: normalised DLT inside a seeded RANSAC loop,
//! refitted on the final inlier set.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Homography;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier threshold on the forward reprojection error, in pixels.
    pub threshold: f64,
    pub seed: u64,
    /// Stop early once this confidence of an all-inlier draw is reached.
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 2000,
            threshold: 3.0,
            seed: 0,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&v| v).count()
    }
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normaliser(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (cx, cy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p[0] / n, a.1 + p[1] / n));
    let mean = pts.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean > 1e-12 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply(m: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let w = m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)];
    [
        (m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)]) / w,
        (m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)]) / w,
    ]
}

/// Direct linear transform on at least four correspondences.
pub fn fit_dlt(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(Error::EstimationFailed(format!("need 4 correspondences, got {n}")));
    }
    let (ts, td) = (normaliser(src), normaliser(dst));
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let [x, y] = apply(&ts, src[i]);
        let [u, v] = apply(&td, dst[i]);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::EstimationFailed("SVD did not converge".into()))?;
    let k = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("nine singular values");
    let h = vt.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::EstimationFailed("degenerate target points".into()))?;
    Homography::from_matrix(td_inv * hn * ts).map_err(|e| Error::EstimationFailed(e.to_string()))
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).hypot(b[1] - a[1]) * (c[0] - a[0]).hypot(c[1] - a[1])).max(1e-12);
    cross.abs() / scale < 1e-6
}

fn degenerate(pts: &[[f64; 2]]) -> bool {
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                if collinear(pts[i], pts[j], pts[k]) {
                    return true;
                }
            }
        }
    }
    false
}

pub fn reprojection_error(h: &Homography, s: [f64; 2], d: [f64; 2]) -> f64 {
    match h.warp_point(s[0], s[1]) {
        Some((x, y)) => (x - d[0]).hypot(y - d[1]),
        None => f64::INFINITY,
    }
}

fn score(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], threshold: f64) -> (usize, f64, Vec<bool>) {
    let mut count = 0;
    let mut cost = 0.0;
    let mut mask = Vec::with_capacity(src.len());
    for (s, d) in src.iter().zip(dst) {
        let e = reprojection_error(h, *s, *d);
        let inlier = e <= threshold;
        if inlier {
            count += 1;
            cost += e * e;
        }
        mask.push(inlier);
    }
    (count, cost, mask)
}

/// Fits `dst ~ H src`. Hypotheses with more inliers win; ties go to the lower
/// squared inlier error.
pub fn estimate_homography(src: &[[f64; 2]], dst: &[[f64; 2]], params: &RansacParams) -> Result<RansacFit> {
    let n = src.len();
    if dst.len() != n {
        return Err(Error::Shape("source and target point counts differ".into()));
    }
    if n < 4 {
        return Err(Error::EstimationFailed(format!("need at least 4 matches, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, f64, Homography, Vec<bool>)> = None;
    let mut limit = params.iterations;
    let mut it = 0;
    while it < limit {
        it += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let s: Vec<[f64; 2]> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<[f64; 2]> = idx.iter().map(|&i| dst[i]).collect();
        if degenerate(&s) || degenerate(&d) {
            continue;
        }
        let Ok(h) = fit_dlt(&s, &d) else { continue };
        let (count, cost, mask) = score(&h, src, dst, params.threshold);
        let better = match &best {
            None => true,
            Some((c, e, _, _)) => count > *c || (count == *c && cost < *e),
        };
        if better {
            best = Some((count, cost, h, mask));
            let ratio = count as f64 / n as f64;
            let miss = 1.0 - ratio.powi(4);
            if miss <= 1e-12 {
                limit = it;
            } else {
                let need = ((1.0 - params.confidence).ln() / miss.ln()).ceil();
                if need.is_finite() && need >= 0.0 {
                    limit = limit.min((need as usize).max(it));
                }
            }
        }
    }
    let (count, _, mut h, mut mask) =
        best.ok_or_else(|| Error::EstimationFailed("every sample was degenerate".into()))?;
    if count < 4 {
        return Err(Error::EstimationFailed(format!("only {count} inliers")));
    }
    for _ in 0..2 {
        let s: Vec<[f64; 2]> = (0..n).filter(|&i| mask[i]).map(|i| src[i]).collect();
        let d: Vec<[f64; 2]> = (0..n).filter(|&i| mask[i]).map(|i| dst[i]).collect();
        match fit_dlt(&s, &d) {
            Ok(refit) => {
                let (c, _, m) = score(&refit, src, dst, params.threshold);
                if c < 4 {
                    break;
                }
                h = refit;
                mask = m;
            }
            Err(_) => break,
        }
    }
    Ok(RansacFit {
        homography: h,
        inliers: mask,
    })
}

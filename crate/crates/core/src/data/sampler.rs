//! Keypoint-guided correspondence sampling.
//!
//! 1. `M = M1 + warp(M2 -> a)` (built by [`TeacherHeatmaps`]).
//! 2. Split `M` into a `grid x grid` array of cells.
//! 3. Keep the maximum of every cell (ties: smallest row-major index).
//! 4. Drop candidates whose warp leaves b, then greedy NMS by score.
//! 5. Keep the best `n_points` and warp them into b.

use serde::{Deserialize, Serialize};

use super::heatmap::TeacherHeatmaps;
use super::image::Raster;
use super::pair::TrainingPair;
use crate::config::SamplerConfig;
use crate::error::{Error, Result};

/// Sampled correspondences: integer pixels of a and their exact warps in b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondences {
    pub points_a: Vec<[usize; 2]>,
    pub points_b: Vec<[f64; 2]>,
    pub scores: Vec<f32>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.points_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_a.is_empty()
    }
}

/// Cell boundaries along one axis: cell `i` spans `[i*n/g, (i+1)*n/g)`.
pub fn cell_edges(n: usize, grid: usize) -> Vec<usize> {
    (0..=grid).map(|i| i * n / grid).collect()
}

/// `(x, y, score)` of the maximum of every non-empty cell, cells in
/// row-major order.
pub fn cell_maxima(map: &Raster, grid: usize) -> Vec<(usize, usize, f32)> {
    let xs = cell_edges(map.width, grid);
    let ys = cell_edges(map.height, grid);
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut best: Option<(usize, usize, f32)> = None;
            for y in ys[gy]..ys[gy + 1] {
                for x in xs[gx]..xs[gx + 1] {
                    let v = map.get(x, y);
                    if best.is_none_or(|b| v > b.2) {
                        best = Some((x, y, v));
                    }
                }
            }
            if let Some(b) = best {
                out.push(b);
            }
        }
    }
    out
}

/// Greedy suppression in descending score order (ties: smallest row-major
/// index). A point is dropped when a kept one lies within Chebyshev
/// distance `radius`.
pub fn nms_points(points: &[(usize, usize, f32)], width: usize, radius: usize) -> Vec<(usize, usize, f32)> {
    let mut order: Vec<&(usize, usize, f32)> = points.iter().collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1 * width + a.0).cmp(&(b.1 * width + b.0))));
    let mut kept: Vec<(usize, usize, f32)> = Vec::new();
    for &p in order {
        let close = kept
            .iter()
            .any(|k| k.0.abs_diff(p.0) <= radius && k.1.abs_diff(p.1) <= radius);
        if !close {
            kept.push(p);
        }
    }
    kept
}

pub fn sample_correspondences(
    pair: &TrainingPair,
    teacher: &TeacherHeatmaps,
    cfg: &SamplerConfig,
) -> Result<Correspondences> {
    let map = &teacher.compound;
    if (map.width, map.height) != (pair.width(), pair.height()) {
        return Err(Error::Shape("teacher maps do not match the pair".into()));
    }
    let candidates: Vec<_> = cell_maxima(map, cfg.grid)
        .into_iter()
        .filter(|&(x, y, _)| pair.is_valid(x, y))
        .collect();
    let kept = nms_points(&candidates, map.width, cfg.nms_radius);
    let mut out = Correspondences {
        points_a: Vec::new(),
        points_b: Vec::new(),
        scores: Vec::new(),
    };
    for (x, y, s) in kept.into_iter().take(cfg.n_points) {
        let (u, v) = pair
            .homography
            .warp_point(x as f64, y as f64)
            .expect("valid mask implies a finite warp");
        out.points_a.push([x, y]);
        out.points_b.push([u, v]);
        out.scores.push(s);
    }
    if out.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: out.len(),
        });
    }
    Ok(out)
}

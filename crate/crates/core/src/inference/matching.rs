use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::KeypointSet;
use crate::config::MatchMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub mode: MatchMode,
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `||s_a d_i - s_b d_j||` with `s = 1` in plain mode and `s = w` otherwise.
pub fn pair_distance(a: &KeypointSet, i: usize, b: &KeypointSet, j: usize, mode: MatchMode) -> f64 {
    let (wa, wb) = match mode {
        MatchMode::Plain => (1.0, 1.0),
        MatchMode::AttentionWeighted => (a.weights[i] as f64, b.weights[j] as f64),
    };
    a.descriptor(i)
        .iter()
        .zip(b.descriptor(j))
        .map(|(&x, &y)| {
            let d = wa * x as f64 - wb * y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Full `|a| x |b|` distance matrix, row-major.
pub fn distance_matrix(a: &KeypointSet, b: &KeypointSet, mode: MatchMode) -> Vec<f64> {
    (0..a.len())
        .into_par_iter()
        .flat_map_iter(|i| (0..b.len()).map(move |j| pair_distance(a, i, b, j, mode)))
        .collect()
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mutual nearest neighbours; distance ties go to the lowest index.
pub fn match_features(a: &KeypointSet, b: &KeypointSet, mode: MatchMode) -> MatchSet {
    let (n, m) = (a.len(), b.len());
    let mut pairs = Vec::new();
    if n > 0 && m > 0 {
        let d = distance_matrix(a, b, mode);
        let col_best: Vec<usize> = (0..m).map(|j| argmin((0..n).map(|i| d[i * m + j]))).collect();
        for i in 0..n {
            let j = argmin(d[i * m..(i + 1) * m].iter().copied());
            if col_best[j] == i {
                pairs.push(Match {
                    a: i,
                    b: j,
                    distance: d[i * m + j],
                });
            }
        }
    }
    MatchSet { mode, pairs }
}

//! Per-image keypoint sets and their text export.
//!
//! ```text
//! ctxfeat-features 1
//! image <path>
//! size <height> <width>
//! count <m> dim <d>
//! x y score weight d0 ... d(d-1)      (m lines, 9 significant digits)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEADER: &str = "ctxfeat-features 1";
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub image: String,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub coords: Vec<[f64; 2]>,
    pub scores: Vec<f32>,
    /// Row-major `len() x dim`, unit rows.
    pub descriptors: Vec<f32>,
    pub weights: Vec<f32>,
}

impl KeypointSet {
    pub fn empty(image: &str, height: usize, width: usize, dim: usize) -> Self {
        Self {
            image: image.to_string(),
            height,
            width,
            dim,
            coords: Vec::new(),
            scores: Vec::new(),
            descriptors: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy with every attention weight set to 1.
    pub fn with_unit_weights(&self) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w = 1.0);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.scores.len() != n || self.weights.len() != n || self.descriptors.len() != n * self.dim {
            return Err(Error::Shape("keypoint set fields disagree in length".into()));
        }
        for i in 0..n {
            let norm = self.descriptor(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidValue(format!("descriptor {i} has norm {norm}")));
            }
            if !(self.weights[i] > 0.0) || !self.weights[i].is_finite() {
                return Err(Error::InvalidValue(format!("weight {i} is {}", self.weights[i])));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "image {}", self.image).unwrap();
        writeln!(s, "size {} {}", self.height, self.width).unwrap();
        writeln!(s, "count {} dim {}", self.len(), self.dim).unwrap();
        for i in 0..self.len() {
            let [x, y] = self.coords[i];
            write!(s, "{:.8e} {:.8e} {:.8e} {:.8e}", x, y, self.scores[i], self.weights[i]).unwrap();
            for v in self.descriptor(i) {
                write!(s, " {v:.8e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let fail = |msg: String| Error::format(origin, msg);
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| fail(format!("missing {what} line")));
        if next("header")?.trim() != HEADER {
            return Err(fail("not a feature file".into()));
        }
        let image = next("image")?
            .strip_prefix("image ")
            .ok_or_else(|| fail("bad image line".into()))?
            .to_string();
        let nums = |line: &str, keys: &[&str]| -> Result<Vec<usize>> {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let mut out = Vec::new();
            let mut k = 0;
            for key in keys {
                if toks.get(k) != Some(key) {
                    return Err(fail(format!("expected {key:?} in {line:?}")));
                }
                let v = toks
                    .get(k + 1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail(format!("bad value for {key} in {line:?}")))?;
                out.push(v);
                k += 2;
            }
            Ok(out)
        };
        let size_line = next("size")?;
        let toks: Vec<&str> = size_line.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "size" {
            return Err(fail(format!("bad size line {size_line:?}")));
        }
        let height = toks[1].parse().map_err(|_| fail("bad height".into()))?;
        let width = toks[2].parse().map_err(|_| fail("bad width".into()))?;
        let cd = nums(next("count")?, &["count", "dim"])?;
        let (count, dim) = (cd[0], cd[1]);
        let mut set = Self::empty(&image, height, width, dim);
        for (n, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| fail(format!("keypoint {n}: unparsable number")))?;
            if vals.len() != 4 + dim {
                return Err(fail(format!("keypoint {n}: expected {} values, found {}", 4 + dim, vals.len())));
            }
            set.coords.push([vals[0], vals[1]]);
            set.scores.push(vals[2] as f32);
            set.weights.push(vals[3] as f32);
            set.descriptors.extend(vals[4..].iter().map(|&v| v as f32));
        }
        if set.len() != count {
            return Err(fail(format!("header announces {count} keypoints, found {}", set.len())));
        }
        set.validate().map_err(|e| fail(e.to_string()))?;
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KeypointSet {
        KeypointSet {
            image: "a b.png".into(),
            height: 16,
            width: 24,
            dim: 2,
            coords: vec![[3.0, 4.0], [10.0, 1.0]],
            scores: vec![0.95, 0.912_345_67],
            descriptors: vec![0.6, 0.8, 1.0 / 3f32.sqrt(), (2.0f32 / 3.0).sqrt()],
            weights: vec![1.25, 0.031_415_926],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = sample();
        let back = KeypointSet::from_text(&s.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), s.to_text());
    }

    #[test]
    fn count_and_norm_are_checked() {
        let text = sample().to_text();
        let bad_count = text.replace("count 2", "count 3");
        assert!(KeypointSet::from_text(&bad_count, Path::new("m")).is_err());
        let mut s = sample();
        s.descriptors[0] = 0.7;
        assert!(KeypointSet::from_text(&s.to_text(), Path::new("m")).is_err());
    }
}

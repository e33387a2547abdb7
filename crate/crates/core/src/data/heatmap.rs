//! Teacher heatmaps and their on-disk format.
//!
//! ```text
//! magic   4 bytes  "HMAP"
//! version u32 LE   currently 1
//! height  u32 LE
//! width   u32 LE
//! values  f32 LE   height * width, row-major, each in [0, 1]
//! ```

use std::path::Path;

use super::homography::Homography;
use super::image::{gaussian_blur, Raster};
use super::pair::TrainingPair;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HMAP";
pub const VERSION: u32 = 1;

pub fn encode(map: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * map.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses and validates a heatmap; every value must lie in `[0, 1]`.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Raster> {
    let fail = |msg: String| Error::format(origin, msg);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(fail("not a heatmap file (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(fail(format!("unsupported heatmap version {}", word(4))));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * h * w {
        return Err(fail(format!(
            "{h}x{w} heatmap needs {} payload bytes, found {}",
            4 * h * w,
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(fail(format!(
            "value {} at row {}, column {} is outside [0, 1]",
            data[i],
            i / w,
            i % w
        )));
    }
    Raster::from_vec(w, h, data)
}

pub fn write(path: &Path, map: &Raster) -> Result<()> {
    std::fs::write(path, encode(map))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Raster> {
    decode(&std::fs::read(path)?, path)
}

/// Teacher probability maps bound to a training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherHeatmaps {
    /// Map of image a.
    pub m1: Raster,
    /// Map of image b.
    pub m2: Raster,
    /// `m2` pulled back into the frame of a; zero where the warp leaves b.
    pub m1_warp: Raster,
    /// `m1 + m1_warp`, in `[0, 2]`.
    pub compound: Raster,
}

impl TeacherHeatmaps {
    pub fn new(m1: Raster, m2: Raster, homography: &Homography) -> Result<Self> {
        if (m1.width, m1.height) != (m2.width, m2.height) {
            return Err(Error::Shape(format!(
                "teacher maps differ in size: {}x{} vs {}x{}",
                m1.width, m1.height, m2.width, m2.height
            )));
        }
        let mut m1_warp = Raster::new(m1.width, m1.height);
        for y in 0..m1.height {
            for x in 0..m1.width {
                if let Some((u, v)) = homography.warp_point(x as f64, y as f64) {
                    if let Some(s) = m2.sample(u, v) {
                        m1_warp.set(x, y, s);
                    }
                }
            }
        }
        let compound = Raster::from_vec(
            m1.width,
            m1.height,
            m1.data.iter().zip(&m1_warp.data).map(|(a, b)| a + b).collect(),
        )?;
        Ok(Self {
            m1,
            m2,
            m1_warp,
            compound,
        })
    }

    /// Per-cell maxima of the compound map, one `(x, y, score)` per cell.
    pub fn candidates(&self, grid: usize) -> Vec<(usize, usize, f32)> {
        super::sampler::cell_maxima(&self.compound, grid)
    }
}

/// Reads two heatmap files and binds them to `pair`.
pub fn import_teacher_heatmaps(m1: &Path, m2: &Path, pair: &TrainingPair) -> Result<TeacherHeatmaps> {
    let (a, b) = (read(m1)?, read(m2)?);
    for (map, path) in [(&a, m1), (&b, m2)] {
        if (map.width, map.height) != (pair.image_a.width, pair.image_a.height) {
            return Err(Error::format(
                path,
                format!(
                    "heatmap is {}x{} but the pair images are {}x{}",
                    map.width, map.height, pair.image_a.width, pair.image_a.height
                ),
            ));
        }
    }
    TeacherHeatmaps::new(a, b, &pair.homography)
}

/// Stand-in teacher for synthetic scenes: unit Gaussian bumps (sigma 1) on
/// the known keypoints, over a weak edge response capped at 0.25.
pub fn synthetic_teacher(image: &Raster, keypoints: &[[f64; 2]]) -> Raster {
    let smooth = gaussian_blur(image, 1.0);
    let (w, h) = (image.width, image.height);
    let mut grad = vec![0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = smooth.get(x + 1, y) - smooth.get(x - 1, y);
            let gy = smooth.get(x, y + 1) - smooth.get(x, y - 1);
            grad[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let peak = grad.iter().cloned().fold(0f32, f32::max).max(1e-6);
    let mut out = Raster::from_vec(w, h, grad.into_iter().map(|g| 0.25 * g / peak).collect())
        .expect("matching size");
    for &[kx, ky] in keypoints {
        let (x0, x1) = ((kx - 3.0).floor().max(0.0) as usize, ((kx + 3.0).ceil().max(0.0) as usize).min(w.saturating_sub(1)));
        let (y0, y1) = ((ky - 3.0).floor().max(0.0) as usize, ((ky + 3.0).ceil().max(0.0) as usize).min(h.saturating_sub(1)));
        if kx < -3.0 || ky < -3.0 || x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - kx).powi(2) + (y as f64 - ky).powi(2);
                let v = (-d2 / 2.0).exp() as f32;
                if v > out.get(x, y) {
                    out.set(x, y, v);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let m = Raster::from_vec(3, 2, vec![0.0, 0.1, 0.25, 1.0, 0.999_999_9, 0.5]).unwrap();
        let bytes = encode(&m);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn out_of_range_value_names_the_pixel() {
        let m = Raster::from_vec(3, 2, vec![0.0, 0.1, 0.2, 0.3, 1.5, 0.5]).unwrap();
        let err = decode(&encode(&m), Path::new("bad.hmap")).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");
        assert!(err.contains("bad.hmap"), "{err}");
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let m = Raster::new(4, 4);
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"PNG\0aaaaaaaaaaaaaaaa", Path::new("x")).is_err());
    }

    #[test]
    fn compound_of_identity_pair_doubles_the_map() {
        let m = Raster::from_vec(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let t = TeacherHeatmaps::new(m.clone(), m.clone(), &Homography::identity()).unwrap();
        assert_eq!(t.compound.data, vec![0.0, 1.0, 2.0, 0.5]);
    }

    #[test]
    fn synthetic_teacher_peaks_on_keypoints() {
        let img = Raster::new(16, 16);
        let t = synthetic_teacher(&img, &[[5.0, 6.0]]);
        assert_eq!(t.get(5, 6), 1.0);
        assert!(t.get(7, 6) < 0.2);
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::HomographyParams;
use crate::error::{Error, Result};

/// Third homogeneous coordinates smaller than this map to no point.
pub const MIN_W: f64 = 1e-10;
pub const MIN_DET: f64 = 1e-8;
const MAX_RETRIES: usize = 100;

/// Invertible projective map of the plane, stored with `h[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: Matrix3<f64>,
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = Error;
    fn try_from(v: [f64; 9]) -> Result<Self> {
        Self::from_rows(v)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_rows()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Builds from a matrix, normalising `h[2][2]` to 1 and checking the
    /// determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("homography has non-finite entries".into()));
        }
        let s = m[(2, 2)];
        if s.abs() < 1e-12 {
            return Err(Error::InvalidValue("homography has h[2][2] = 0".into()));
        }
        let m = m / s;
        if m.determinant().abs() <= MIN_DET {
            return Err(Error::InvalidValue(format!(
                "homography is singular (det = {:e})",
                m.determinant()
            )));
        }
        Ok(Self { m })
    }

    pub fn from_rows(v: [f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    /// Parses nine whitespace-separated reals, row-major.
    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidValue(format!("not a number: {t:?}")))
            })
            .collect::<Result<_>>()?;
        let arr: [f64; 9] = values.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidValue(format!("expected 9 values, found {}", v.len()))
        })?;
        Self::from_rows(arr)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_rows(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Self {
        let inv = self.m.try_inverse().expect("determinant checked at construction");
        Self::from_matrix(inv).expect("inverse of an invertible map")
    }

    /// Map that applies `self` first and then `next`: `next · self`.
    pub fn then(&self, next: &Homography) -> Result<Self> {
        Self::from_matrix(next.m * self.m)
    }

    pub fn warp_point(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let v = self.m * Vector3::new(x, y, 1.0);
        if v.z.abs() < MIN_W || !x.is_finite() || !y.is_finite() {
            return None;
        }
        Some((v.x / v.z, v.y / v.z))
    }

    /// Warps every point; invalid ones come back as `None`.
    pub fn warp_points(&self, pts: &[[f64; 2]]) -> Vec<Option<[f64; 2]>> {
        pts.iter()
            .map(|p| self.warp_point(p[0], p[1]).map(|(x, y)| [x, y]))
            .collect()
    }

    pub fn corners(width: usize, height: usize) -> [[f64; 2]; 4] {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
    }

    /// Samples a homography about the centre of a `width x height` image.
    ///
    /// Composition, applied right to left: move the centre to the origin,
    /// perspective tilt (in units of the half-size), scale, rotate, move back
    /// and translate by up to `max_translation` of the image size.
    pub fn random(seed: u64, params: &HomographyParams, width: usize, height: usize) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_RETRIES {
            let h = Self::sample(&mut rng, params, width, height);
            if let Ok(h) = h {
                if h.keeps_corners_convex(width, height) {
                    return Ok(h);
                }
            }
        }
        Err(Error::InvalidValue(format!(
            "no valid homography after {MAX_RETRIES} draws for seed {seed}"
        )))
    }

    fn sample(rng: &mut ChaCha8Rng, p: &HomographyParams, width: usize, height: usize) -> Result<Self> {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        let angle = rng.random_range(-p.max_rotation_deg..=p.max_rotation_deg).to_radians();
        let scale = rng.random_range(p.scale_min..=p.scale_max);
        let px = rng.random_range(-p.max_perspective..=p.max_perspective);
        let py = rng.random_range(-p.max_perspective..=p.max_perspective);
        let tx = rng.random_range(-p.max_translation..=p.max_translation) * width as f64;
        let ty = rng.random_range(-p.max_translation..=p.max_translation) * height as f64;
        let (s, c) = angle.sin_cos();
        let to_origin = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, px / hw, py / hh, 1.0);
        let rot_scale = Matrix3::new(scale * c, -scale * s, 0.0, scale * s, scale * c, 0.0, 0.0, 0.0, 1.0);
        let back = Matrix3::new(1.0, 0.0, cx + tx, 0.0, 1.0, cy + ty, 0.0, 0.0, 1.0);
        Self::from_matrix(back * rot_scale * tilt * to_origin)
    }

    /// True when the warped image corners stay finite, in front of the camera
    /// and form a convex quadrilateral with the original orientation.
    pub fn keeps_corners_convex(&self, width: usize, height: usize) -> bool {
        let mut pts = Vec::with_capacity(4);
        for [x, y] in Self::corners(width, height) {
            let v = self.m * Vector3::new(x, y, 1.0);
            if v.z <= MIN_W {
                return false;
            }
            pts.push((v.x / v.z, v.y / v.z));
        }
        (0..4).all(|i| {
            let (a, b, c) = (pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]);
            (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) > 1e-6
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_give_identity() {
        let h = Homography::random(3, &HomographyParams::identity(), 128, 96).unwrap();
        assert!((h.matrix() - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn translation_layout() {
        let h = Homography::translation(3.0, -2.0);
        assert_eq!(h.to_rows(), [1.0, 0.0, 3.0, 0.0, 1.0, -2.0, 0.0, 0.0, 1.0]);
        assert_eq!(h.warp_point(1.0, 1.0), Some((4.0, -1.0)));
    }

    #[test]
    fn same_seed_same_matrix() {
        let p = HomographyParams::default();
        assert_eq!(
            Homography::random(11, &p, 400, 400).unwrap(),
            Homography::random(11, &p, 400, 400).unwrap()
        );
        assert_ne!(
            Homography::random(11, &p, 400, 400).unwrap(),
            Homography::random(12, &p, 400, 400).unwrap()
        );
    }

    #[test]
    fn points_at_infinity_are_flagged() {
        let h = Homography::from_rows([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(h.warp_point(-1.0, 5.0).is_none());
    }

    #[test]
    fn parse_and_json_round_trip() {
        let h = Homography::parse("1 0 5\n0 1 -2\n0 0 1\n").unwrap();
        assert_eq!(h, Homography::translation(5.0, -2.0));
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<Homography>(&json).unwrap(), h);
        assert!(Homography::parse("1 2 3").is_err());
        assert!(Homography::parse("0 0 0 0 0 0 0 0 1").is_err());
    }
}

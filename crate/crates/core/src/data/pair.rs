use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::heatmap::{synthetic_teacher, TeacherHeatmaps};
use super::homography::Homography;
use super::image::{gaussian_blur, Raster};
use super::shapes::{PseudoLabelMap, Scene};
use super::split_seed;
use crate::config::{DataConfig, PhotometricParams};
use crate::error::{Error, Result};

/// Two equal-size views related by `homography` (a -> b).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub image_a: Raster,
    pub image_b: Raster,
    pub homography: Homography,
    /// Row-major; true where the pixel of a warps inside b.
    pub valid_mask: Vec<bool>,
    /// Top-left corner of the crop of a inside the source image.
    pub origin: [usize; 2],
}

impl TrainingPair {
    pub fn width(&self) -> usize {
        self.image_a.width
    }

    pub fn height(&self) -> usize {
        self.image_a.height
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid_mask[y * self.width() + x]
    }

    pub fn coverage(&self) -> f64 {
        self.valid_mask.iter().filter(|&&v| v).count() as f64 / self.valid_mask.len() as f64
    }
}

/// A pair together with its teacher maps and binary labels.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub pair: TrainingPair,
    pub teacher: TeacherHeatmaps,
    pub labels_a: PseudoLabelMap,
    pub labels_b: PseudoLabelMap,
}

/// Pixels of an `width x height` image whose warp lands inside an image of the
/// same size.
pub fn valid_mask(h: &Homography, width: usize, height: usize) -> Vec<bool> {
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    let mut mask = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let ok = h
                .warp_point(x as f64, y as f64)
                .is_some_and(|(u, v)| u >= 0.0 && v >= 0.0 && u <= xmax && v <= ymax);
            mask.push(ok);
        }
    }
    mask
}

/// Renders view b: `b(q) = source(H^-1 q + origin)`, zero outside the source.
pub fn warp_view(source: &Raster, h: &Homography, origin: [usize; 2], width: usize, height: usize) -> Raster {
    let inv = h.inverse();
    let mut out = Raster::new(width, height);
    for y in 0..height {
        for x in 0..width {
            if let Some((u, v)) = inv.warp_point(x as f64, y as f64) {
                if let Some(s) = source.sample(u + origin[0] as f64, v + origin[1] as f64) {
                    out.set(x, y, s);
                }
            }
        }
    }
    out
}

/// Brightness shift, contrast about the mean, then Gaussian blur.
pub fn photometric_jitter(img: &Raster, params: &PhotometricParams, seed: u64) -> Raster {
    if !params.enabled {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = rng.random_range(-params.brightness..=params.brightness) as f32;
    let contrast = rng.random_range(params.contrast_min..=params.contrast_max) as f32;
    let sigma = rng.random_range(0.0..=params.blur_sigma_max);
    let mean = img.mean() as f32;
    let mut out = img.clone();
    for v in &mut out.data {
        *v = ((*v - mean) * contrast + mean + delta).clamp(0.0, 1.0);
    }
    gaussian_blur(&out, sigma)
}

/// Cuts a `crop x crop` view a from `source` at a random position and builds
/// view b through a random homography. Both views are quantised to 8 bits.
pub fn synthesize_pair(source: &Raster, seed: u64, cfg: &DataConfig) -> Result<TrainingPair> {
    let crop = cfg.crop;
    if source.width < crop || source.height < crop {
        return Err(Error::InvalidValue(format!(
            "image is {}x{} but crop mode needs at least {crop}x{crop}",
            source.width, source.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 0));
    let origin = [
        rng.random_range(0..=source.width - crop),
        rng.random_range(0..=source.height - crop),
    ];
    let homography = Homography::random(split_seed(seed, 1), &cfg.homography, crop, crop)?;
    let image_a = source.crop(origin[0], origin[1], crop, crop)?;
    let image_b = warp_view(source, &homography, origin, crop, crop);
    let mut image_a = photometric_jitter(&image_a, &cfg.photometric, split_seed(seed, 2));
    let mut image_b = photometric_jitter(&image_b, &cfg.photometric, split_seed(seed, 3));
    image_a.quantize();
    image_b.quantize();
    let valid_mask = valid_mask(&homography, crop, crop);
    if !valid_mask.iter().any(|&v| v) {
        return Err(Error::InvalidValue("pair has an empty valid mask".into()));
    }
    Ok(TrainingPair {
        image_a,
        image_b,
        homography,
        valid_mask,
        origin,
    })
}

/// Full synthetic sample: random shape scene on a canvas 1.5x the crop,
/// analytic labels and the stand-in teacher.
pub fn synthetic_sample(seed: u64, cfg: &DataConfig) -> Result<TrainingSample> {
    let canvas = cfg.crop * 3 / 2;
    let scene = Scene::random_dense(canvas, canvas, cfg.scene_cell, split_seed(seed, 10));
    let source = scene.render();
    let keypoints = scene.visible_keypoints();
    let teacher_src = synthetic_teacher(&source, &keypoints);
    let pair = synthesize_pair(&source, seed, cfg)?;
    let [ox, oy] = pair.origin.map(|v| v as f64);
    let (w, h) = (pair.width(), pair.height());
    let mut labels_a = PseudoLabelMap::new(w, h);
    let mut labels_b = PseudoLabelMap::new(w, h);
    for &[x, y] in &keypoints {
        labels_a.mark(x - ox, y - oy);
        if let Some((u, v)) = pair.homography.warp_point(x - ox, y - oy) {
            labels_b.mark(u, v);
        }
    }
    let m1 = teacher_src.crop(pair.origin[0], pair.origin[1], w, h)?;
    let m2 = warp_view(&teacher_src, &pair.homography, pair.origin, w, h);
    let teacher = TeacherHeatmaps::new(m1, m2, &pair.homography)?;
    Ok(TrainingSample {
        pair,
        teacher,
        labels_a,
        labels_b,
    })
}

/// Sample from a corpus image and its teacher map (same size as the image).
/// Labels are teacher pixels at or above 0.5 that are maximal in their 3x3
/// neighbourhood.
pub fn corpus_sample(source: &Raster, teacher_src: &Raster, seed: u64, cfg: &DataConfig) -> Result<TrainingSample> {
    if (source.width, source.height) != (teacher_src.width, teacher_src.height) {
        return Err(Error::Shape("teacher map and image differ in size".into()));
    }
    let pair = synthesize_pair(source, seed, cfg)?;
    let (w, h) = (pair.width(), pair.height());
    let m1 = teacher_src.crop(pair.origin[0], pair.origin[1], w, h)?;
    let m2 = warp_view(teacher_src, &pair.homography, pair.origin, w, h);
    let labels_a = labels_from_heatmap(&m1, 0.5);
    let labels_b = labels_from_heatmap(&m2, 0.5);
    let teacher = TeacherHeatmaps::new(m1, m2, &pair.homography)?;
    Ok(TrainingSample {
        pair,
        teacher,
        labels_a,
        labels_b,
    })
}

pub fn labels_from_heatmap(map: &Raster, threshold: f32) -> PseudoLabelMap {
    let mut g = PseudoLabelMap::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.get(x, y);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            for ny in y.saturating_sub(1)..(y + 2).min(map.height) {
                for nx in x.saturating_sub(1)..(x + 2).min(map.width) {
                    let u = map.get(nx, ny);
                    if u > v || (u == v && ny * map.width + nx < y * map.width + x) {
                        is_max = false;
                    }
                }
            }
            if is_max {
                g.data[y * map.width + x] = 1;
            }
        }
    }
    g
}

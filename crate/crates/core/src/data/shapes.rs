//! Synthetic shape scenes with analytically known corners.
//!
//! Scenes are painted back to front with 4x4 supersampling. Polygon vertices
//! and line endpoints are the keypoints; a keypoint hidden under a shape
//! painted later is dropped. Ellipses add texture without keypoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Raster;
use crate::error::{Error, Result};

const SUPERSAMPLE: usize = 4;
/// Upper bound on the positive-pixel fraction of a label map.
pub const MAX_POSITIVE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Convex polygon, vertices in counter-clockwise or clockwise order.
    Polygon { vertices: Vec<[f64; 2]>, intensity: f32 },
    Line { from: [f64; 2], to: [f64; 2], width: f64, intensity: f32 },
    Ellipse { center: [f64; 2], axes: [f64; 2], angle: f64, intensity: f32 },
}

impl Shape {
    pub fn intensity(&self) -> f32 {
        match self {
            Shape::Polygon { intensity, .. }
            | Shape::Line { intensity, .. }
            | Shape::Ellipse { intensity, .. } => *intensity,
        }
    }

    pub fn keypoints(&self) -> Vec<[f64; 2]> {
        match self {
            Shape::Polygon { vertices, .. } => vertices.clone(),
            Shape::Line { from, to, .. } => vec![*from, *to],
            Shape::Ellipse { .. } => Vec::new(),
        }
    }

    /// Closed point-membership test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Polygon { vertices, .. } => {
                let n = vertices.len();
                let mut sign = 0.0f64;
                for i in 0..n {
                    let [ax, ay] = vertices[i];
                    let [bx, by] = vertices[(i + 1) % n];
                    let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                    if cross.abs() < 1e-9 {
                        continue;
                    }
                    if sign == 0.0 {
                        sign = cross.signum();
                    } else if cross.signum() != sign {
                        return false;
                    }
                }
                true
            }
            Shape::Line { from, to, width, .. } => {
                let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - from[0]) * dx + (y - from[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (from[0] + t * dx - x, from[1] + t * dy - y);
                (px * px + py * py).sqrt() <= width / 2.0
            }
            Shape::Ellipse { center, axes, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - center[0], y - center[1]);
                let u = (c * dx + s * dy) / axes[0];
                let v = (-s * dx + c * dy) / axes[1];
                u * u + v * v <= 1.0
            }
        }
    }

    fn bbox(&self) -> [f64; 4] {
        match self {
            Shape::Polygon { vertices, .. } => {
                let mut b = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
                for [x, y] in vertices {
                    b = [b[0].min(*x), b[1].min(*y), b[2].max(*x), b[3].max(*y)];
                }
                b
            }
            Shape::Line { from, to, width, .. } => {
                let r = width / 2.0;
                [
                    from[0].min(to[0]) - r,
                    from[1].min(to[1]) - r,
                    from[0].max(to[0]) + r,
                    from[1].max(to[1]) + r,
                ]
            }
            Shape::Ellipse { center, axes, .. } => {
                let r = axes[0].max(axes[1]);
                [center[0] - r, center[1] - r, center[0] + r, center[1] + r]
            }
        }
    }
}

/// Binary keypoint label map.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl PseudoLabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Sets the pixel nearest to `(x, y)` if it lies on the map.
    pub fn mark(&mut self, x: f64, y: f64) {
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < self.width && (yi as usize) < self.height {
            self.data[yi as usize * self.width + xi as usize] = 1;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn positives(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v != 0).count() as f64 / self.data.len().max(1) as f64
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidValue("label map must be binary".into()));
        }
        let f = self.positive_fraction();
        if f >= MAX_POSITIVE_FRACTION {
            return Err(Error::InvalidValue(format!(
                "label map is {:.1}% positive, limit {:.0}%",
                100.0 * f,
                100.0 * MAX_POSITIVE_FRACTION
            )));
        }
        Ok(())
    }
}

/// A scene description that can be rendered and queried for its keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub background: f32,
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn new(width: usize, height: usize, background: f32) -> Self {
        Self {
            width,
            height,
            background,
            shapes: Vec::new(),
        }
    }

    pub fn push(&mut self, shape: Shape) {
        self.shapes.push(shape);
    }

    pub fn render(&self) -> Raster {
        let mut img = Raster::filled(self.width, self.height, self.background);
        let offsets: Vec<f64> = (0..SUPERSAMPLE)
            .map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
            .collect();
        let total = (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for shape in &self.shapes {
            let [x0, y0, x1, y1] = shape.bbox();
            let xs = (x0.floor() - 1.0).max(0.0) as usize;
            let ys = (y0.floor() - 1.0).max(0.0) as usize;
            let xe = ((x1.ceil() + 1.0).max(0.0) as usize).min(self.width);
            let ye = ((y1.ceil() + 1.0).max(0.0) as usize).min(self.height);
            for y in ys..ye {
                for x in xs..xe {
                    let mut hits = 0usize;
                    for oy in &offsets {
                        for ox in &offsets {
                            if shape.contains(x as f64 + ox, y as f64 + oy) {
                                hits += 1;
                            }
                        }
                    }
                    if hits > 0 {
                        let c = hits as f32 / total;
                        let v = img.get(x, y);
                        img.set(x, y, v * (1.0 - c) + shape.intensity() * c);
                    }
                }
            }
        }
        img
    }

    /// Keypoints not covered by any shape painted after their owner.
    pub fn visible_keypoints(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for (i, shape) in self.shapes.iter().enumerate() {
            for p in shape.keypoints() {
                if !self.shapes[i + 1..].iter().any(|s| s.contains(p[0], p[1])) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn labels(&self) -> PseudoLabelMap {
        let mut g = PseudoLabelMap::new(self.width, self.height);
        for [x, y] in self.visible_keypoints() {
            g.mark(x, y);
        }
        g
    }

    /// Random scene with roughly one shape per 40x40 block.
    pub fn random(width: usize, height: usize, seed: u64) -> Self {
        Self::random_dense(width, height, 40.0, seed)
    }

    /// Random scene: roughly one shape per `cell` x `cell` block, jittered.
    pub fn random_dense(width: usize, height: usize, cell: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background: f32 = rng.random_range(0.0..1.0);
        let mut scene = Self::new(width, height, background);
        let (nx, ny) = ((width as f64 / cell).ceil() as usize, (height as f64 / cell).ceil() as usize);
        for gy in 0..ny {
            for gx in 0..nx {
                if rng.random_bool(0.15) {
                    continue;
                }
                let cx = (gx as f64 + rng.random_range(0.2..0.8)) * cell;
                let cy = (gy as f64 + rng.random_range(0.2..0.8)) * cell;
                let intensity = contrasting(&mut rng, background);
                let shape = match rng.random_range(0..10) {
                    0..=5 => random_polygon(&mut rng, [cx, cy], intensity),
                    6..=7 => Shape::Ellipse {
                        center: [cx, cy],
                        axes: [rng.random_range(5.0..16.0), rng.random_range(5.0..16.0)],
                        angle: rng.random_range(0.0..std::f64::consts::PI),
                        intensity,
                    },
                    _ => {
                        let len = rng.random_range(14.0..32.0);
                        let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
                        let (s, c) = a.sin_cos();
                        Shape::Line {
                            from: [cx - c * len / 2.0, cy - s * len / 2.0],
                            to: [cx + c * len / 2.0, cy + s * len / 2.0],
                            width: rng.random_range(1.5..3.5),
                            intensity,
                        }
                    }
                };
                scene.push(shape);
            }
        }
        scene
    }
}

fn contrasting(rng: &mut ChaCha8Rng, background: f32) -> f32 {
    loop {
        let v: f32 = rng.random_range(0.0..1.0);
        if (v - background).abs() >= 0.35 {
            return v;
        }
    }
}

fn random_polygon(rng: &mut ChaCha8Rng, c: [f64; 2], intensity: f32) -> Shape {
    let k = rng.random_range(3..=5usize);
    let r = rng.random_range(8.0..18.0);
    let step = std::f64::consts::TAU / k as f64;
    let start = rng.random_range(0.0..std::f64::consts::TAU);
    let vertices = (0..k)
        .map(|i| {
            let a = start + i as f64 * step + rng.random_range(-0.25..0.25) * step;
            let ri = r * rng.random_range(0.75..1.0);
            [c[0] + ri * a.cos(), c[1] + ri * a.sin()]
        })
        .collect();
    Shape::Polygon { vertices, intensity }
}

/// Renders a random scene and its corner labels.
pub fn synthetic_corner_labels(canvas_size: usize, seed: u64) -> (Raster, PseudoLabelMap) {
    let scene = Scene::random(canvas_size, canvas_size, seed);
    (scene.render(), scene.labels())
}

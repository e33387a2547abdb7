//! Run configuration.
//!
//! Every knob lives in one [`RunConfig`] tree. On disk it is a flat
//! `key = value` text file with dotted keys (`model.descriptor_dim = 128`);
//! `#` starts a comment. Command-line overrides use the same keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the four per-scale detector logits are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Weights pass through a softmax, so the fused logit is a convex combination.
    Softmax,
    /// Weights are used as-is.
    Raw,
}

/// Distance used by the mutual nearest neighbour matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// `||d_i - d'_j||`
    Plain,
    /// `||w_i d_i - w'_j d'_j||`
    AttentionWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 1 for grayscale input, 3 for RGB.
    pub in_channels: usize,
    pub backbone_channels: [usize; 4],
    pub descriptor_dim: usize,
    pub sub_descriptor_dim: usize,
    pub agca_pool_size: usize,
    pub agca_patch_size: usize,
    pub agca_embed_dim: usize,
    pub agca_depth: usize,
    pub agca_heads: usize,
    pub agca_mlp_ratio: f64,
    pub dilation_rates: [usize; 3],
    pub fusion: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            backbone_channels: [32, 64, 128, 128],
            descriptor_dim: 128,
            sub_descriptor_dim: 32,
            agca_pool_size: 64,
            agca_patch_size: 16,
            agca_embed_dim: 128,
            agca_depth: 8,
            agca_heads: 4,
            agca_mlp_ratio: 2.0,
            dilation_rates: [6, 12, 18],
            fusion: FusionMode::Softmax,
        }
    }
}

impl ModelConfig {
    /// Quarter-width backbone used for desk-scale training.
    pub fn toy() -> Self {
        Self {
            backbone_channels: [8, 16, 32, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels != 1 && self.in_channels != 3 {
            return bad(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.backbone_channels.iter().any(|&c| c == 0) {
            return bad("backbone_channels must all be positive".into());
        }
        if self.sub_descriptor_dim == 0 || self.descriptor_dim != 4 * self.sub_descriptor_dim {
            return bad(format!(
                "descriptor_dim ({}) must equal 4 x sub_descriptor_dim ({})",
                self.descriptor_dim, self.sub_descriptor_dim
            ));
        }
        if self.agca_patch_size == 0
            || self.agca_pool_size == 0
            || self.agca_pool_size % self.agca_patch_size != 0
        {
            return bad(format!(
                "agca_pool_size ({}) must be a positive multiple of agca_patch_size ({})",
                self.agca_pool_size, self.agca_patch_size
            ));
        }
        if self.agca_depth == 0 || self.agca_heads == 0 || self.agca_embed_dim == 0 {
            return bad("agca depth, heads and embed_dim must be positive".into());
        }
        if self.agca_embed_dim % self.agca_heads != 0 {
            return bad(format!(
                "agca_embed_dim ({}) must be divisible by agca_heads ({})",
                self.agca_embed_dim, self.agca_heads
            ));
        }
        if !(self.agca_mlp_ratio > 0.0) || !self.agca_mlp_ratio.is_finite() {
            return bad("agca_mlp_ratio must be a positive number".into());
        }
        if self.dilation_rates.iter().any(|&d| d == 0) {
            return bad("dilation rates must be positive".into());
        }
        Ok(())
    }

    /// Number of transformer tokens, `(pool / patch)^2`.
    pub fn token_count(&self) -> usize {
        let side = self.agca_pool_size / self.agca_patch_size;
        side * side
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.agca_embed_dim as f64) * self.agca_mlp_ratio).round().max(1.0) as usize
    }

    pub fn cat_channels(&self) -> usize {
        self.backbone_channels.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax smoothing factor `T`.
    pub temperature: f64,
    pub margin: f64,
    /// Positive-pixel weight of the detector BCE.
    pub bce_lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 15.0,
            margin: 1.0,
            bce_lambda: 200.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("loss.temperature must be > 0".into()));
        }
        if !(self.margin > 0.0) || !(self.bce_lambda > 0.0) {
            return Err(Error::Config("loss.margin and loss.bce_lambda must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub poly_power: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            poly_power: 0.9,
            batch_size: 12,
            epochs: 30,
        }
    }
}

/// Ranges of the random homography sampler. Rotation in degrees; perspective
/// and translation are relative to the image half-size / size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyParams {
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_perspective: f64,
    pub max_translation: f64,
}

impl Default for HomographyParams {
    fn default() -> Self {
        Self {
            max_rotation_deg: 25.0,
            scale_min: 0.8,
            scale_max: 1.2,
            max_perspective: 0.1,
            max_translation: 0.1,
        }
    }
}

impl HomographyParams {
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            max_perspective: 0.0,
            max_translation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.max_rotation_deg <= 90.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.scale_max <= 4.0
            && (0.0..=0.5).contains(&self.max_perspective)
            && (0.0..=0.5).contains(&self.max_translation);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("homography ranges out of bounds: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    pub enabled: bool,
    pub brightness: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub blur_sigma_max: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: 0.2,
            contrast_min: 0.8,
            contrast_max: 1.25,
            blur_sigma_max: 1.0,
        }
    }
}

impl PhotometricParams {
    pub fn none() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// The heatmap is split into `grid x grid` cells.
    pub grid: usize,
    pub n_points: usize,
    pub nms_radius: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            grid: 40,
            n_points: 400,
            nms_radius: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Directory of 8-bit images. `None` renders synthetic shape scenes.
    pub corpus: Option<PathBuf>,
    pub pairs: usize,
    pub crop: usize,
    /// Side of the block that holds one shape in synthetic scenes, pixels.
    pub scene_cell: f64,
    pub seed: u64,
    pub homography: HomographyParams,
    pub photometric: PhotometricParams,
    pub sampler: SamplerConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            pairs: 2000,
            crop: 400,
            scene_cell: 40.0,
            seed: 0,
            homography: HomographyParams::default(),
            photometric: PhotometricParams::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub alpha: f64,
    pub nms_radius: usize,
    pub max_keypoints: usize,
    pub match_mode: MatchMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            nms_radius: 4,
            max_keypoints: 2000,
            match_mode: MatchMode::AttentionWeighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    /// Threshold used for the matching score.
    pub score_threshold: f64,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub ransac_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: (1..=10).map(f64::from).collect(),
            score_threshold: 3.0,
            ransac_iterations: 2000,
            ransac_threshold: 3.0,
            ransac_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Desk-scale preset: quarter-width model, 128 px crops, 200 pairs, 5 epochs.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            optim: OptimConfig {
                batch_size: 2,
                epochs: 5,
                ..OptimConfig::default()
            },
            data: DataConfig {
                pairs: 200,
                crop: 128,
                scene_cell: 24.0,
                sampler: SamplerConfig {
                    grid: 16,
                    n_points: 128,
                    nms_radius: 4,
                },
                ..DataConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.data.homography.validate()?;
        if self.optim.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be positive".into()));
        }
        if !(self.optim.learning_rate > 0.0) {
            return Err(Error::Config("optim.learning_rate must be positive".into()));
        }
        if self.data.crop % 8 != 0 || self.data.crop < 32 {
            return Err(Error::Config(format!(
                "data.crop must be a multiple of 8 and at least 32, got {}",
                self.data.crop
            )));
        }
        if !(self.data.scene_cell >= 8.0) {
            return Err(Error::Config(format!("data.scene_cell must be at least 8, got {}", self.data.scene_cell)));
        }
        if self.data.sampler.grid == 0 || self.data.sampler.n_points < 2 {
            return Err(Error::Config("data.sampler needs grid > 0 and n_points >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.inference.alpha) {
            return Err(Error::Config("inference.alpha must lie in [0, 1]".into()));
        }
        if let Some(corpus) = &self.data.corpus {
            if !corpus.is_dir() {
                return Err(Error::Config(format!(
                    "data.corpus {} is not a directory",
                    corpus.display()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let d = &mut self.data;
        match key {
            "model.in_channels" => m.in_channels = parse(key, value)?,
            "model.backbone_channels" => m.backbone_channels = parse_array(key, value)?,
            "model.descriptor_dim" => m.descriptor_dim = parse(key, value)?,
            "model.sub_descriptor_dim" => m.sub_descriptor_dim = parse(key, value)?,
            "model.agca_pool_size" => m.agca_pool_size = parse(key, value)?,
            "model.agca_patch_size" => m.agca_patch_size = parse(key, value)?,
            "model.agca_embed_dim" => m.agca_embed_dim = parse(key, value)?,
            "model.agca_depth" => m.agca_depth = parse(key, value)?,
            "model.agca_heads" => m.agca_heads = parse(key, value)?,
            "model.agca_mlp_ratio" => m.agca_mlp_ratio = parse(key, value)?,
            "model.dilation_rates" => m.dilation_rates = parse_array(key, value)?,
            "model.fusion" => {
                m.fusion = match value {
                    "softmax" => FusionMode::Softmax,
                    "raw" => FusionMode::Raw,
                    _ => return Err(bad_value(key, value)),
                }
            }
            "loss.temperature" => self.loss.temperature = parse(key, value)?,
            "loss.margin" => self.loss.margin = parse(key, value)?,
            "loss.bce_lambda" => self.loss.bce_lambda = parse(key, value)?,
            "optim.learning_rate" => self.optim.learning_rate = parse(key, value)?,
            "optim.poly_power" => self.optim.poly_power = parse(key, value)?,
            "optim.batch_size" => self.optim.batch_size = parse(key, value)?,
            "optim.epochs" => self.optim.epochs = parse(key, value)?,
            "data.corpus" => {
                d.corpus = match value {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "data.pairs" => d.pairs = parse(key, value)?,
            "data.crop" => d.crop = parse(key, value)?,
            "data.scene_cell" => d.scene_cell = parse(key, value)?,
            "data.seed" => d.seed = parse(key, value)?,
            "data.homography.max_rotation_deg" => d.homography.max_rotation_deg = parse(key, value)?,
            "data.homography.scale_min" => d.homography.scale_min = parse(key, value)?,
            "data.homography.scale_max" => d.homography.scale_max = parse(key, value)?,
            "data.homography.max_perspective" => d.homography.max_perspective = parse(key, value)?,
            "data.homography.max_translation" => d.homography.max_translation = parse(key, value)?,
            "data.photometric.enabled" => d.photometric.enabled = parse(key, value)?,
            "data.photometric.brightness" => d.photometric.brightness = parse(key, value)?,
            "data.photometric.contrast_min" => d.photometric.contrast_min = parse(key, value)?,
            "data.photometric.contrast_max" => d.photometric.contrast_max = parse(key, value)?,
            "data.photometric.blur_sigma_max" => d.photometric.blur_sigma_max = parse(key, value)?,
            "data.sampler.grid" => d.sampler.grid = parse(key, value)?,
            "data.sampler.n_points" => d.sampler.n_points = parse(key, value)?,
            "data.sampler.nms_radius" => d.sampler.nms_radius = parse(key, value)?,
            "inference.alpha" => self.inference.alpha = parse(key, value)?,
            "inference.nms_radius" => self.inference.nms_radius = parse(key, value)?,
            "inference.max_keypoints" => self.inference.max_keypoints = parse(key, value)?,
            "inference.match_mode" => {
                self.inference.match_mode = match value {
                    "plain" => MatchMode::Plain,
                    "attention_weighted" | "weighted" => MatchMode::AttentionWeighted,
                    _ => return Err(bad_value(key, value)),
                }
            }
            "eval.thresholds" => self.eval.thresholds = parse_list(key, value)?,
            "eval.score_threshold" => self.eval.score_threshold = parse(key, value)?,
            "eval.ransac_iterations" => self.eval.ransac_iterations = parse(key, value)?,
            "eval.ransac_threshold" => self.eval.ransac_threshold = parse(key, value)?,
            "eval.ransac_seed" => self.eval.ransac_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Serializes every key, in a stable order, as `key = value` lines.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let d = &self.data;
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let fusion = match m.fusion {
            FusionMode::Softmax => "softmax",
            FusionMode::Raw => "raw",
        };
        let mode = match self.inference.match_mode {
            MatchMode::Plain => "plain",
            MatchMode::AttentionWeighted => "attention_weighted",
        };
        let corpus = d
            .corpus
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "none".into());
        let thresholds = self
            .eval
            .thresholds
            .iter()
            .map(|t| format!("{t:?}"))
            .collect::<Vec<_>>()
            .join(",");
        let entries: Vec<(&str, String)> = vec![
            ("model.in_channels", m.in_channels.to_string()),
            ("model.backbone_channels", join(&m.backbone_channels)),
            ("model.descriptor_dim", m.descriptor_dim.to_string()),
            ("model.sub_descriptor_dim", m.sub_descriptor_dim.to_string()),
            ("model.agca_pool_size", m.agca_pool_size.to_string()),
            ("model.agca_patch_size", m.agca_patch_size.to_string()),
            ("model.agca_embed_dim", m.agca_embed_dim.to_string()),
            ("model.agca_depth", m.agca_depth.to_string()),
            ("model.agca_heads", m.agca_heads.to_string()),
            ("model.agca_mlp_ratio", format!("{:?}", m.agca_mlp_ratio)),
            ("model.dilation_rates", join(&m.dilation_rates)),
            ("model.fusion", fusion.into()),
            ("loss.temperature", format!("{:?}", self.loss.temperature)),
            ("loss.margin", format!("{:?}", self.loss.margin)),
            ("loss.bce_lambda", format!("{:?}", self.loss.bce_lambda)),
            ("optim.learning_rate", format!("{:?}", self.optim.learning_rate)),
            ("optim.poly_power", format!("{:?}", self.optim.poly_power)),
            ("optim.batch_size", self.optim.batch_size.to_string()),
            ("optim.epochs", self.optim.epochs.to_string()),
            ("data.corpus", corpus),
            ("data.pairs", d.pairs.to_string()),
            ("data.crop", d.crop.to_string()),
            ("data.scene_cell", format!("{:?}", d.scene_cell)),
            ("data.seed", d.seed.to_string()),
            ("data.homography.max_rotation_deg", format!("{:?}", d.homography.max_rotation_deg)),
            ("data.homography.scale_min", format!("{:?}", d.homography.scale_min)),
            ("data.homography.scale_max", format!("{:?}", d.homography.scale_max)),
            ("data.homography.max_perspective", format!("{:?}", d.homography.max_perspective)),
            ("data.homography.max_translation", format!("{:?}", d.homography.max_translation)),
            ("data.photometric.enabled", d.photometric.enabled.to_string()),
            ("data.photometric.brightness", format!("{:?}", d.photometric.brightness)),
            ("data.photometric.contrast_min", format!("{:?}", d.photometric.contrast_min)),
            ("data.photometric.contrast_max", format!("{:?}", d.photometric.contrast_max)),
            ("data.photometric.blur_sigma_max", format!("{:?}", d.photometric.blur_sigma_max)),
            ("data.sampler.grid", d.sampler.grid.to_string()),
            ("data.sampler.n_points", d.sampler.n_points.to_string()),
            ("data.sampler.nms_radius", d.sampler.nms_radius.to_string()),
            ("inference.alpha", format!("{:?}", self.inference.alpha)),
            ("inference.nms_radius", self.inference.nms_radius.to_string()),
            ("inference.max_keypoints", self.inference.max_keypoints.to_string()),
            ("inference.match_mode", mode.into()),
            ("eval.thresholds", thresholds),
            ("eval.score_threshold", format!("{:?}", self.eval.score_threshold)),
            ("eval.ransac_iterations", self.eval.ransac_iterations.to_string()),
            ("eval.ransac_threshold", format!("{:?}", self.eval.ransac_threshold)),
            ("eval.ransac_seed", self.eval.ransac_seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, value))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad_value(key, value)))
        .collect()
}

fn parse_array<T: std::str::FromStr, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items: Vec<T> = parse_list(key, value)?;
    items.try_into().map_err(|_| bad_value(key, value))
}

//! Matching accuracy, matching score and homography accuracy over image
//! pairs with known homographies.

pub mod hpatches;
pub mod metrics;
pub mod ransac;
pub mod report;

use std::path::Path;

use rayon::prelude::*;

pub use metrics::{corner_error, evaluate_pair, homography_accuracy, matching_score, mma, PairEvaluation};
pub use ransac::{estimate_homography, RansacFit, RansacParams};
pub use report::{MetricReport, MetricSummary, Skipped};

use crate::config::{EvalConfig, InferenceConfig, MatchMode};
use crate::data::{Homography, TrainingSample};
use crate::error::{Error, Result};
use crate::inference::{extract_features, KeypointSet};
use crate::model::Model;

/// Features of both images of a pair plus its ground truth.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub name: String,
    pub kind: String,
    pub a: KeypointSet,
    pub b: KeypointSet,
    pub homography: Homography,
}

/// Scores already-extracted pairs in parallel.
pub fn report_from_features(pairs: &[FeaturePair], mode: MatchMode, cfg: &EvalConfig, skipped: Vec<Skipped>) -> MetricReport {
    let evals: Vec<PairEvaluation> = pairs
        .par_iter()
        .map(|p| evaluate_pair(&p.name, &p.kind, &p.a, &p.b, &p.homography, mode, cfg))
        .collect();
    MetricReport::new(mode, &cfg.thresholds, evals, skipped)
}

/// Runs the model on both views of every synthetic sample.
pub fn extract_sample_pairs(model: &Model, samples: &[TrainingSample], cfg: &InferenceConfig) -> Result<Vec<FeaturePair>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(FeaturePair {
                name: format!("pair_{i:05}"),
                kind: "synthetic".into(),
                a: extract_features(model, &s.pair.image_a, &format!("pair_{i:05}_a"), cfg)?,
                b: extract_features(model, &s.pair.image_b, &format!("pair_{i:05}_b"), cfg)?,
                homography: s.pair.homography,
            })
        })
        .collect()
}

/// Extracts every image of every sequence once and pairs the reference with
/// each target.
pub fn extract_sequence_pairs(model: &Model, seqs: &[hpatches::Sequence], cfg: &InferenceConfig) -> Result<Vec<FeaturePair>> {
    let mut out = Vec::new();
    for s in seqs {
        let feats: Vec<KeypointSet> = s
            .images
            .iter()
            .enumerate()
            .map(|(k, img)| extract_features(model, img, &format!("{}/{}", s.name, k + 1), cfg))
            .collect::<Result<_>>()?;
        for (k, h) in s.homographies.iter().enumerate() {
            out.push(FeaturePair {
                name: format!("{}/1-{}", s.name, k + 2),
                kind: s.kind.to_string(),
                a: feats[0].clone(),
                b: feats[k + 1].clone(),
                homography: *h,
            });
        }
    }
    Ok(out)
}

/// Pairs built from exported feature files laid out as
/// `<features>/<sequence>/<k>.<ext>.feat`.
pub fn load_feature_pairs(features: &Path, seqs: &[hpatches::Sequence]) -> (Vec<FeaturePair>, Vec<Skipped>) {
    let find = |seq: &str, k: usize| -> Result<KeypointSet> {
        let dir = features.join(seq);
        let prefix = format!("{k}.");
        let mut hits: Vec<_> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let n = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                n.starts_with(&prefix) && n.ends_with(".feat")
            })
            .collect();
        hits.sort();
        let path = hits
            .first()
            .ok_or_else(|| Error::format(&dir, format!("no feature file for image {k}")))?;
        KeypointSet::read(path)
    };
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for s in seqs {
        let loaded: Result<Vec<KeypointSet>> = (1..=s.images.len()).map(|k| find(&s.name, k)).collect();
        match loaded {
            Ok(feats) => {
                for (k, h) in s.homographies.iter().enumerate() {
                    pairs.push(FeaturePair {
                        name: format!("{}/1-{}", s.name, k + 2),
                        kind: s.kind.to_string(),
                        a: feats[0].clone(),
                        b: feats[k + 1].clone(),
                        homography: *h,
                    });
                }
            }
            Err(e) => skipped.push(Skipped {
                name: s.name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (pairs, skipped)
}

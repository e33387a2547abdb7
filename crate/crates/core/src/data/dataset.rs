//! On-disk training sets: one JSON line per pair plus a summary file.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heatmap;
use super::homography::Homography;
use super::image::Raster;
use super::pair::{corpus_sample, synthetic_sample, valid_mask, TrainingPair, TrainingSample};
use super::shapes::PseudoLabelMap;
use super::split_seed;
use crate::config::DataConfig;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub seed: u64,
    pub image_a: String,
    pub image_b: String,
    pub teacher_a: String,
    pub teacher_b: String,
    pub labels_a: String,
    pub labels_b: String,
    /// Maps a to b, row-major.
    pub homography: Homography,
    pub origin: [usize; 2],
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub pairs: usize,
    pub seed: u64,
    pub mean_coverage: f64,
    pub source: String,
}

/// Seed of pair `index` in a set generated from `base`.
pub fn pair_seed(base: u64, index: usize) -> u64 {
    split_seed(base, 1_000 + index as u64)
}

/// Image files of a corpus directory, sorted by name.
pub fn corpus_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!("corpus {} holds no images", dir.display())));
    }
    Ok(out)
}

/// Builds sample `index` in memory. Synthetic scenes are used unless the
/// config names a corpus, whose images need a `<stem>.hmap` teacher map.
pub fn make_sample(cfg: &DataConfig, corpus: Option<&[PathBuf]>, index: usize) -> Result<TrainingSample> {
    let seed = pair_seed(cfg.seed, index);
    match corpus {
        None => synthetic_sample(seed, cfg),
        Some(files) => {
            let path = &files[index % files.len()];
            let image = Raster::load(path)?;
            let teacher = heatmap::read(&path.with_extension("hmap"))?;
            corpus_sample(&image, &teacher, seed, cfg)
        }
    }
}

/// Generates `count` samples starting at `first`, in parallel, in index order.
pub fn generate_samples(cfg: &DataConfig, first: usize, count: usize) -> Result<Vec<TrainingSample>> {
    let corpus = match &cfg.corpus {
        Some(dir) => Some(corpus_images(dir)?),
        None => None,
    };
    (first..first + count)
        .into_par_iter()
        .map(|i| make_sample(cfg, corpus.as_deref(), i))
        .collect()
}

fn save_labels(g: &PseudoLabelMap, path: &Path) -> Result<()> {
    let bytes = g.data.iter().map(|&v| v * 255).collect();
    image::GrayImage::from_raw(g.width as u32, g.height as u32, bytes)
        .expect("buffer length matches dimensions")
        .save(path)?;
    Ok(())
}

fn load_labels(path: &Path) -> Result<PseudoLabelMap> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(PseudoLabelMap {
        width: w as usize,
        height: h as usize,
        data: img.into_raw().into_iter().map(|v| (v >= 128) as u8).collect(),
    })
}

fn write_sample(dir: &Path, index: usize, seed: u64, s: &TrainingSample) -> Result<ManifestRecord> {
    let name = |suffix: &str| format!("pair_{index:05}_{suffix}");
    let rec = ManifestRecord {
        index,
        seed,
        image_a: name("a.png"),
        image_b: name("b.png"),
        teacher_a: name("a.hmap"),
        teacher_b: name("b.hmap"),
        labels_a: name("a_labels.png"),
        labels_b: name("b_labels.png"),
        homography: s.pair.homography,
        origin: s.pair.origin,
        coverage: s.pair.coverage(),
    };
    s.pair.image_a.save(&dir.join(&rec.image_a))?;
    s.pair.image_b.save(&dir.join(&rec.image_b))?;
    heatmap::write(&dir.join(&rec.teacher_a), &s.teacher.m1)?;
    heatmap::write(&dir.join(&rec.teacher_b), &s.teacher.m2)?;
    save_labels(&s.labels_a, &dir.join(&rec.labels_a))?;
    save_labels(&s.labels_b, &dir.join(&rec.labels_b))?;
    Ok(rec)
}

/// Writes `cfg.pairs` samples, the manifest and the summary into `dir`.
pub fn write_dataset(cfg: &DataConfig, dir: &Path) -> Result<ManifestSummary> {
    std::fs::create_dir_all(dir)?;
    let corpus = match &cfg.corpus {
        Some(d) => Some(corpus_images(d)?),
        None => None,
    };
    let records: Vec<ManifestRecord> = (0..cfg.pairs)
        .into_par_iter()
        .map(|i| {
            let sample = make_sample(cfg, corpus.as_deref(), i)?;
            write_sample(dir, i, pair_seed(cfg.seed, i), &sample)
        })
        .collect::<Result<_>>()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST))?);
    for r in &records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let mean_coverage = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.coverage).sum::<f64>() / records.len() as f64
    };
    let summary = ManifestSummary {
        pairs: records.len(),
        seed: cfg.seed,
        mean_coverage,
        source: match &cfg.corpus {
            Some(d) => d.display().to_string(),
            None => "synthetic-shapes".into(),
        },
    };
    std::fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST);
    let file = std::fs::File::open(&path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_sample(dir: &Path, rec: &ManifestRecord) -> Result<TrainingSample> {
    let image_a = Raster::load(&dir.join(&rec.image_a))?;
    let image_b = Raster::load(&dir.join(&rec.image_b))?;
    if (image_a.width, image_a.height) != (image_b.width, image_b.height) {
        return Err(Error::format(&dir.join(&rec.image_b), "views differ in size"));
    }
    let pair = TrainingPair {
        valid_mask: valid_mask(&rec.homography, image_a.width, image_a.height),
        image_a,
        image_b,
        homography: rec.homography,
        origin: rec.origin,
    };
    let teacher = heatmap::import_teacher_heatmaps(&dir.join(&rec.teacher_a), &dir.join(&rec.teacher_b), &pair)?;
    Ok(TrainingSample {
        labels_a: load_labels(&dir.join(&rec.labels_a))?,
        labels_b: load_labels(&dir.join(&rec.labels_b))?,
        pair,
        teacher,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrainingSample>> {
    read_manifest(dir)?
        .par_iter()
        .map(|r| load_sample(dir, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            pairs: 2,
            crop: 48,
            seed: 3,
            ..DataConfig::default()
        };
        let summary = write_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(summary.pairs, 2);
        let loaded = load_dataset(dir.path()).unwrap();
        let fresh = generate_samples(&cfg, 0, 2).unwrap();
        for (a, b) in loaded.iter().zip(&fresh) {
            assert_eq!(a.pair, b.pair);
            assert_eq!(a.teacher, b.teacher);
            assert_eq!(a.labels_a, b.labels_a);
            assert_eq!(a.labels_b, b.labels_b);
        }
    }
}

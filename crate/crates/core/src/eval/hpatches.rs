//! HPatches-layout reader and writer.
//!
//! A dataset root holds one directory per sequence. A sequence holds images
//! `1.<ext>` .. `6.<ext>` and files `H_1_k` with nine whitespace-separated
//! reals mapping image 1 to image k. Names starting with `i_` are
//! illumination sequences and `v_` viewpoint sequences.

use std::path::{Path, PathBuf};

use super::report::Skipped;
use crate::data::{Homography, Raster};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 5] = ["ppm", "png", "pgm", "jpg", "jpeg"];

pub fn sequence_kind(name: &str) -> &'static str {
    if name.starts_with("i_") {
        "illumination"
    } else if name.starts_with("v_") {
        "viewpoint"
    } else {
        "other"
    }
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub kind: &'static str,
    /// `images[0]` is the reference image.
    pub images: Vec<Raster>,
    /// `homographies[k - 1]` maps image 1 to image `k + 1`.
    pub homographies: Vec<Homography>,
}

#[derive(Debug, Clone)]
pub struct SequencePair<'a> {
    pub name: String,
    pub kind: &'static str,
    pub reference: &'a Raster,
    pub target: &'a Raster,
    pub homography: Homography,
}

impl Sequence {
    pub fn pairs(&self) -> Vec<SequencePair<'_>> {
        self.homographies
            .iter()
            .enumerate()
            .map(|(k, h)| SequencePair {
                name: format!("{}/1-{}", self.name, k + 2),
                kind: self.kind,
                reference: &self.images[0],
                target: &self.images[k + 1],
                homography: *h,
            })
            .collect()
    }
}

fn find_image(dir: &Path, index: usize) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{index}.{e}")))
        .find(|p| p.is_file())
}

/// Reads one sequence; images are cropped to multiples of 8, which keeps the
/// homographies valid because the crop is anchored at the top-left corner.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let first = find_image(dir, 1).ok_or_else(|| Error::format(dir, "missing reference image 1"))?;
    let mut images = vec![Raster::load(&first)?.crop_to_multiple(8)?];
    let mut homographies = Vec::new();
    for k in 2..=6 {
        let Some(path) = find_image(dir, k) else { break };
        let hpath = dir.join(format!("H_1_{k}"));
        let text = std::fs::read_to_string(&hpath).map_err(|e| Error::format(&hpath, e.to_string()))?;
        let h = Homography::parse(&text).map_err(|e| Error::format(&hpath, e.to_string()))?;
        images.push(Raster::load(&path)?.crop_to_multiple(8)?);
        homographies.push(h);
    }
    if homographies.is_empty() {
        return Err(Error::format(dir, "sequence has no target images"));
    }
    Ok(Sequence {
        kind: sequence_kind(&name),
        name,
        images,
        homographies,
    })
}

/// Sequence names from a list file: one per line, `#` starts a comment.
pub fn read_sequence_list(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Loads every sequence under `root` (or the listed ones). Unreadable
/// sequences are reported instead of aborting the run.
pub fn load_dataset(root: &Path, list: Option<&[String]>) -> Result<(Vec<Sequence>, Vec<Skipped>)> {
    let names: Vec<String> = match list {
        Some(l) => l.to_vec(),
        None => {
            let mut n: Vec<String> = std::fs::read_dir(root)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            n.sort();
            n
        }
    };
    let mut seqs = Vec::new();
    let mut skipped = Vec::new();
    for name in names {
        match load_sequence(&root.join(&name)) {
            Ok(s) => seqs.push(s),
            Err(e) => {
                log::warn!("skipping sequence {name}: {e}");
                skipped.push(Skipped {
                    name,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok((seqs, skipped))
}

/// Writes a sequence in the same layout (PNG images).
pub fn write_sequence(root: &Path, name: &str, images: &[&Raster], homographies: &[Homography]) -> Result<()> {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir)?;
    for (i, img) in images.iter().enumerate() {
        img.save(&dir.join(format!("{}.png", i + 1)))?;
    }
    for (k, h) in homographies.iter().enumerate() {
        let r = h.to_rows();
        let text = format!(
            "{:e} {:e} {:e}\n{:e} {:e} {:e}\n{:e} {:e} {:e}\n",
            r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]
        );
        std::fs::write(dir.join(format!("H_1_{}", k + 2)), text)?;
    }
    Ok(())
}

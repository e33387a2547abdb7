use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::PairEvaluation;
use crate::config::MatchMode;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pairs: usize,
    /// MMA per threshold, mean over pairs.
    pub mma: Vec<f64>,
    /// Mean over pairs with a non-empty shared view.
    pub matching_score: f64,
    pub matching_score_pairs: usize,
    /// Fraction of pairs with a successful homography per threshold.
    pub ha: Vec<f64>,
    pub mean_keypoints: f64,
    pub mean_matches: f64,
    pub mean_correct: f64,
}

impl MetricSummary {
    /// Order-independent: pairs are summed in name order.
    pub fn from_pairs(pairs: &[&PairEvaluation], thresholds: usize) -> Self {
        let mut sorted: Vec<&PairEvaluation> = pairs.to_vec();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let n = sorted.len().max(1) as f64;
        let mean_over = |f: &dyn Fn(&PairEvaluation) -> f64| sorted.iter().map(|p| f(p)).sum::<f64>() / n;
        let mma = (0..thresholds).map(|t| mean_over(&|p| p.mma[t])).collect();
        let ha = (0..thresholds).map(|t| mean_over(&|p| p.ha[t] as u8 as f64)).collect();
        let ms: Vec<f64> = sorted.iter().filter_map(|p| p.matching_score).collect();
        Self {
            pairs: sorted.len(),
            mma,
            matching_score: if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 },
            matching_score_pairs: ms.len(),
            ha,
            mean_keypoints: mean_over(&|p| (p.keypoints_a + p.keypoints_b) as f64 / 2.0),
            mean_matches: mean_over(&|p| p.matches as f64),
            mean_correct: mean_over(&|p| p.correct as f64),
        }
    }

    pub fn mma_at(&self, thresholds: &[f64], t: f64) -> Option<f64> {
        thresholds.iter().position(|&x| x == t).map(|i| self.mma[i])
    }

    pub fn ha_at(&self, thresholds: &[f64], t: f64) -> Option<f64> {
        thresholds.iter().position(|&x| x == t).map(|i| self.ha[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: MatchMode,
    pub thresholds: Vec<f64>,
    pub overall: MetricSummary,
    pub by_kind: BTreeMap<String, MetricSummary>,
    pub skipped: Vec<Skipped>,
    pub pairs: Vec<PairEvaluation>,
}

impl MetricReport {
    pub fn new(mode: MatchMode, thresholds: &[f64], pairs: Vec<PairEvaluation>, skipped: Vec<Skipped>) -> Self {
        let all: Vec<&PairEvaluation> = pairs.iter().collect();
        let mut kinds: BTreeMap<String, Vec<&PairEvaluation>> = BTreeMap::new();
        for p in &pairs {
            kinds.entry(p.kind.clone()).or_default().push(p);
        }
        let by_kind = kinds
            .into_iter()
            .map(|(k, v)| (k, MetricSummary::from_pairs(&v, thresholds.len())))
            .collect();
        Self {
            mode,
            overall: MetricSummary::from_pairs(&all, thresholds.len()),
            thresholds: thresholds.to_vec(),
            by_kind,
            skipped,
            pairs,
        }
    }

    pub fn mma_at(&self, t: f64) -> Option<f64> {
        self.overall.mma_at(&self.thresholds, t)
    }

    pub fn ha_at(&self, t: f64) -> Option<f64> {
        self.overall.ha_at(&self.thresholds, t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table, one row per sequence kind plus the total.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut head = format!("{:<14}{:>7}", "subset", "pairs");
        for t in &self.thresholds {
            head.push_str(&format!("{:>9}", format!("MMA@{t}")));
        }
        head.push_str(&format!("{:>8}{:>8}{:>8}{:>9}{:>9}", "M.S.", "HA@1", "HA@3", "HA@5", "kpts"));
        writeln!(s, "{head}").unwrap();
        let mut rows: Vec<(&str, &MetricSummary)> = self.by_kind.iter().map(|(k, v)| (k.as_str(), v)).collect();
        rows.push(("overall", &self.overall));
        for (name, m) in rows {
            let mut line = format!("{:<14}{:>7}", name, m.pairs);
            for v in &m.mma {
                line.push_str(&format!("{:>9.4}", v));
            }
            let ha = |t: f64| m.ha_at(&self.thresholds, t).map_or("-".to_string(), |v| format!("{v:.4}"));
            line.push_str(&format!(
                "{:>8.4}{:>8}{:>8}{:>9}{:>9.1}",
                m.matching_score,
                ha(1.0),
                ha(3.0),
                ha(5.0),
                m.mean_keypoints
            ));
            writeln!(s, "{line}").unwrap();
        }
        for sk in &self.skipped {
            writeln!(s, "skipped {}: {}", sk.name, sk.reason).unwrap();
        }
        s
    }

    /// MMA against threshold, one polyline per subset.
    pub fn mma_curve_svg(&self) -> String {
        let (w, h, pad) = (480.0, 320.0, 40.0);
        let tmax = self.thresholds.iter().cloned().fold(1.0, f64::max);
        let px = |t: f64| pad + (w - 2.0 * pad) * t / tmax;
        let py = |v: f64| h - pad - (h - 2.0 * pad) * v;
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#).unwrap();
        writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<path d="M{} {} L{} {} L{} {}" stroke="black" fill="none"/>"#,
            px(0.0), py(1.0), px(0.0), py(0.0), px(tmax), py(0.0)
        )
        .unwrap();
        for t in &self.thresholds {
            writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, px(*t), h - pad + 14.0).unwrap();
        }
        for v in [0.0, 0.5, 1.0] {
            writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, pad - 4.0, py(v) + 4.0).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">threshold (px)</text>"#, w / 2.0, h - 6.0).unwrap();
        let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        let mut series: Vec<(&str, &MetricSummary)> = self.by_kind.iter().map(|(k, v)| (k.as_str(), v)).collect();
        series.push(("overall", &self.overall));
        for (i, (name, m)) in series.iter().enumerate() {
            let c = colours[i % colours.len()];
            let pts: Vec<String> = self
                .thresholds
                .iter()
                .zip(&m.mma)
                .map(|(t, v)| format!("{:.1},{:.1}", px(*t), py(*v)))
                .collect();
            writeln!(s, r#"<polyline points="{}" stroke="{c}" fill="none" stroke-width="2"/>"#, pts.join(" ")).unwrap();
            writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#, pad + 8.0, pad + 14.0 * (i as f64 + 1.0)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `<stem>.json`, `<stem>.txt` and `<stem>_mma.svg` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (dir.join(format!("{stem}.json")), self.to_json()?),
            (dir.join(format!("{stem}.txt")), self.to_table()),
            (dir.join(format!("{stem}_mma.svg")), self.mma_curve_svg()),
        ];
        let mut out = Vec::new();
        for (p, body) in files {
            std::fs::write(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }
}

//! Temperature sweep: retrains the context module and descriptor head from
//! the same fresh initialisation at each temperature, keeping the backbone
//! and detector of a trained checkpoint fixed, and scores every result on
//! the same held-out pairs.

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_seed, TrainingSample};
use crate::error::{Error, Result};
use crate::eval::{extract_sample_pairs, report_from_features};
use crate::model::{Checkpoint, Model};
use crate::train::{TrainScope, Trainer, DESCRIPTOR_PREFIXES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub mma: f64,
    pub matching_score: f64,
    pub ha: f64,
    pub mean_matches: f64,
    pub final_l_des: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Pixel threshold of the MMA and HA columns.
    pub threshold: f64,
    pub rows: Vec<SweepRow>,
    /// MMA at the lowest temperature is at least MMA at the highest.
    pub mma_falls: bool,
    /// M.S. at the highest temperature is at least M.S. at the lowest.
    pub score_rises: bool,
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let t = self.threshold;
        let mut s = format!(
            "{:>10} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "T",
            format!("MMA@{t}"),
            "M.S.",
            format!("HA@{t}"),
            "matches",
            "L_des"
        );
        for r in &self.rows {
            s += &format!(
                "{:>10} {:>9.4} {:>9.4} {:>9.4} {:>9.1} {:>9.4}\n",
                r.temperature, r.mma, r.matching_score, r.ha, r.mean_matches, r.final_l_des
            );
        }
        s += &format!(
            "MMA non-increasing from lowest to highest T: {}\nM.S. non-decreasing from lowest to highest T: {}\n",
            self.mma_falls, self.score_rises
        );
        s
    }
}

/// Runs the sweep. Temperatures are evaluated in ascending order.
pub fn temperature_sweep(
    base: &Checkpoint,
    cfg: &RunConfig,
    train: &[TrainingSample],
    held_out: &[TrainingSample],
    temperatures: &[f64],
) -> Result<SweepReport> {
    if temperatures.is_empty() {
        return Err(Error::InvalidValue("no temperatures given".into()));
    }
    let mut temps = temperatures.to_vec();
    temps.sort_by(f64::total_cmp);
    let init_seed = split_seed(cfg.data.seed, 900);
    let threshold = cfg.eval.score_threshold;
    let mut rows = Vec::with_capacity(temps.len());
    for &t in &temps {
        let mut run_cfg = cfg.clone();
        run_cfg.loss.temperature = t;
        let model = Model::from_checkpoint(base, &Device::Cpu)?;
        model.reinitialize(&DESCRIPTOR_PREFIXES, init_seed)?;
        let mut trainer = Trainer::new(&model, &run_cfg, train, TrainScope::DescriptorHead)?;
        trainer.run(None)?;
        let final_l_des = trainer.log.last().map_or(f64::NAN, |e| e.l_des);
        let pairs = extract_sample_pairs(&model, held_out, &run_cfg.inference)?;
        let report = report_from_features(&pairs, run_cfg.inference.match_mode, &run_cfg.eval, vec![]);
        let row = SweepRow {
            temperature: t,
            mma: report.mma_at(threshold).unwrap_or(0.0),
            matching_score: report.overall.matching_score,
            ha: report.ha_at(threshold).unwrap_or(0.0),
            mean_matches: report.overall.mean_matches,
            final_l_des,
        };
        log::info!(
            "T = {t}: MMA@{threshold} {:.4} M.S. {:.4} HA@{threshold} {:.4}",
            row.mma,
            row.matching_score,
            row.ha
        );
        rows.push(row);
    }
    let (lo, hi) = (&rows[0], &rows[rows.len() - 1]);
    Ok(SweepReport {
        threshold,
        mma_falls: lo.mma >= hi.mma,
        score_rises: hi.matching_score >= lo.matching_score,
        rows,
    })
}

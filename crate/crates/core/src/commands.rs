//! Command-line surface. The binary only parses arguments and calls
//! [`execute`]; every subcommand is a plain function here so tests can drive
//! it without spawning a process.
//!
//! Outputs go under `--out`, or `$CTXFEAT_OUT/<subcommand>` (default
//! `runs/<subcommand>`). Every run writes its resolved config there as
//! `config.txt`, which can be fed back with `--config`.

use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{MatchMode, RunConfig};
use crate::data::dataset::{self, IMAGE_EXTENSIONS};
use crate::data::{split_seed, Raster};
use crate::error::{Error, Result};
use crate::eval::{self, hpatches, FeaturePair, MetricReport};
use crate::inference::{extract_features, match_features, KeypointSet};
use crate::losses::gradcheck;
use crate::model::{Checkpoint, Model};
use crate::sweep::temperature_sweep;
use crate::train::{TrainScope, Trainer};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "CTXFEAT_OUT";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full widths, 400 px crops, batch 12, 30 epochs.
    Full,
    /// Quarter widths, 128 px crops, batch 2, 5 epochs.
    Toy,
}

#[derive(Debug, Parser)]
#[command(name = "ctxfeat", version, about = "Keypoint detection, description and matching")]
pub struct Cli {
    /// Base seed (data synthesis, initialisation, batch order).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config file of `key = value` lines applied on top of the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for data loading, matching and tensor kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Single `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a training set of homography-related pairs.
    Synth(SynthArgs),
    /// Train on a synthesized set.
    Train(TrainArgs),
    /// Export keypoints and descriptors for images.
    Extract(ExtractArgs),
    /// Mutual nearest neighbour matching of two feature files.
    Match(MatchArgs),
    /// Score features or a checkpoint on a dataset with known homographies.
    Eval(EvalArgs),
    /// Check loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Retrain the descriptor branch at several temperatures and compare.
    #[command(name = "t-sweep")]
    TSweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of pairs (overrides `data.pairs`).
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Image corpus (overrides `data.corpus`); omitted means synthetic scenes.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epochs (overrides `optim.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files or directories (searched recursively).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    Weighted,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<MatchMode> {
        match self {
            ModeArg::Plain => vec![MatchMode::Plain],
            ModeArg::Weighted => vec![MatchMode::AttentionWeighted],
            ModeArg::Both => vec![MatchMode::Plain, MatchMode::AttentionWeighted],
        }
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Distance (defaults to `inference.match_mode`).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Sequence root (`<seq>/1.ppm ... H_1_k`) or a directory written by `synth`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub checkpoint: Option<PathBuf>,
    /// Exported features laid out as `<features>/<seq>/<k>.<ext>.feat`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// File listing the sequences to use, one per line.
    #[arg(long)]
    pub sequences: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// RANSAC seed (overrides `eval.ransac_seed`).
    #[arg(long)]
    pub ransac_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training set written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out set written by `synth`.
    #[arg(long)]
    pub held_out: PathBuf,
    /// Trained checkpoint whose backbone and detector are kept.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 5.0, 15.0, 50.0])]
    pub temperatures: Vec<f64>,
    /// Epochs per temperature (overrides `optim.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Extract(_) => "extract",
            Command::Match(_) => "match",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::TSweep(_) => "t-sweep",
        }
    }

    fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::Synth(a) => a.out.as_ref(),
            Command::Train(a) => a.out.as_ref(),
            Command::Extract(a) => a.out.as_ref(),
            Command::Match(a) => a.out.as_ref(),
            Command::Eval(a) => a.out.as_ref(),
            Command::Gradcheck(a) => a.out.as_ref(),
            Command::TSweep(a) => a.out.as_ref(),
        }
    }
}

impl Cli {
    /// Preset, then config file, then `--set`, then `--seed`.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match self.preset {
            Preset::Full => RunConfig::default(),
            Preset::Toy => RunConfig::toy(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.data.seed = s;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        match self.command.out() {
            Some(p) => p.clone(),
            None => output_root().join(self.command.name()),
        }
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Sizes the global rayon pool. Tensor kernels read `RAYON_NUM_THREADS`,
/// which the binary sets before anything else runs.
pub fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs a parsed command line. Returns an error for any validation failure,
/// including a failed gradient check.
pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = cli.resolve_config()?;
    let out = cli.out_dir();
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut cfg, a, &out),
        Command::Train(a) => cmd_train(&mut cfg, a, &out),
        Command::Extract(a) => cmd_extract(&cfg, a, &out),
        Command::Match(a) => cmd_match(&cfg, a, &out),
        Command::Eval(a) => cmd_eval(&mut cfg, a, &out).map(|_| ()),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg, &out),
        Command::TSweep(a) => cmd_t_sweep(&mut cfg, a, &out),
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join(CONFIG_FILE))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_synth(cfg: &mut RunConfig, a: &SynthArgs, out: &Path) -> Result<()> {
    if let Some(p) = a.pairs {
        cfg.data.pairs = p;
    }
    if let Some(c) = &a.corpus {
        cfg.data.corpus = Some(c.clone());
    }
    cfg.validate()?;
    prepare_out(cfg, out)?;
    let summary = dataset::write_dataset(&cfg.data, out)?;
    println!(
        "wrote {} pairs to {} (source {}, mean coverage {:.3})",
        summary.pairs,
        out.display(),
        summary.source,
        summary.mean_coverage
    );
    Ok(())
}

pub fn cmd_train(cfg: &mut RunConfig, a: &TrainArgs, out: &Path) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.optim.epochs = e;
    }
    cfg.validate()?;
    let samples = dataset::load_dataset(&a.data)?;
    if samples.is_empty() {
        return Err(Error::InvalidValue(format!("{}: dataset is empty", a.data.display())));
    }
    prepare_out(cfg, out)?;
    let model = Model::new(&cfg.model, cfg.data.seed, &Device::Cpu)?;
    let mut trainer = Trainer::new(&model, cfg, &samples, TrainScope::Full)?;
    trainer.dump_dir = Some(out.to_path_buf());
    if let Some(path) = &a.resume {
        trainer.resume(&Checkpoint::read(path)?)?;
        log::info!("resumed at step {}", trainer.step);
    }
    log::info!(
        "{} usable pairs, {} steps per epoch, {} steps",
        trainer.usable_pairs(),
        trainer.steps_per_epoch(),
        trainer.total_steps()
    );
    trainer.run(Some(out))?;
    if let Some(last) = trainer.log.last() {
        println!(
            "finished at step {}: L_det {:.4} L_des {:.4} L_total {:.4}",
            trainer.step, last.l_det, last.l_des, last.l_total
        );
    }
    println!("checkpoint: {}", out.join("last.ckpt").display());
    Ok(())
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn walk_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk_images(&p, out)?;
        } else if is_image(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// `(image path, path relative to the export root)` for every input.
fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            walk_images(input, &mut found)?;
            for p in found {
                let rel = p.strip_prefix(input).unwrap_or(&p).to_path_buf();
                out.push((p, rel));
            }
        } else {
            let rel = PathBuf::from(input.file_name().unwrap_or(input.as_os_str()));
            out.push((input.clone(), rel));
        }
    }
    Ok(out)
}

/// Export path of an image: its relative path with `.feat` appended.
pub fn feature_path(out: &Path, rel: &Path) -> PathBuf {
    let mut name = rel.as_os_str().to_os_string();
    name.push(".feat");
    out.join(name)
}

pub fn cmd_extract(cfg: &RunConfig, a: &ExtractArgs, out: &Path) -> Result<()> {
    let model = Model::load(&a.checkpoint, &Device::Cpu)?;
    let inputs = collect_inputs(&a.inputs)?;
    if inputs.is_empty() {
        return Err(Error::InvalidValue("no input images found".into()));
    }
    prepare_out(cfg, out)?;
    let mut written = 0usize;
    for (path, rel) in &inputs {
        let image = match Raster::load(path) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let name = rel.to_string_lossy().replace('\\', "/");
        let feats = match extract_features(&model, &image, &name, &cfg.inference) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let dest = feature_path(out, rel);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        feats.write(&dest)?;
        println!("{} {} keypoints -> {}", path.display(), feats.len(), dest.display());
        written += 1;
    }
    if written == 0 {
        return Err(Error::InvalidValue(format!(
            "none of the {} input images could be processed",
            inputs.len()
        )));
    }
    Ok(())
}

/// Text form of a match set: a header, then `a b distance` per line.
pub fn matches_to_text(set: &crate::inference::MatchSet) -> String {
    let mode = match set.mode {
        MatchMode::Plain => "plain",
        MatchMode::AttentionWeighted => "attention_weighted",
    };
    let mut s = format!("ctxfeat-matches 1\nmode {mode}\ncount {}\n", set.len());
    for m in &set.pairs {
        s += &format!("{} {} {:.8e}\n", m.a, m.b, m.distance);
    }
    s
}

pub fn cmd_match(cfg: &RunConfig, a: &MatchArgs, out: &Path) -> Result<()> {
    let fa = KeypointSet::read(&a.a)?;
    let fb = KeypointSet::read(&a.b)?;
    let modes = match a.mode {
        Some(m) => m.modes(),
        None => vec![cfg.inference.match_mode],
    };
    prepare_out(cfg, out)?;
    for mode in modes {
        let set = match_features(&fa, &fb, mode);
        let file = match mode {
            MatchMode::Plain => "matches_plain.txt",
            MatchMode::AttentionWeighted => "matches_weighted.txt",
        };
        std::fs::write(out.join(file), matches_to_text(&set))?;
        println!("{mode:?}: {} mutual matches ({} x {} keypoints)", set.len(), fa.len(), fb.len());
    }
    Ok(())
}

fn mode_stem(mode: MatchMode) -> &'static str {
    match mode {
        MatchMode::Plain => "report_plain",
        MatchMode::AttentionWeighted => "report_weighted",
    }
}

/// Loads the evaluation pairs of `a.dataset`, from features or a model.
pub fn eval_pairs(cfg: &RunConfig, a: &EvalArgs) -> Result<(Vec<FeaturePair>, Vec<eval::Skipped>)> {
    if a.dataset.join(dataset::MANIFEST).is_file() {
        let Some(ck) = &a.checkpoint else {
            return Err(Error::Config("a synthesized dataset is scored from --checkpoint".into()));
        };
        let model = Model::load(ck, &Device::Cpu)?;
        let samples = dataset::load_dataset(&a.dataset)?;
        return Ok((eval::extract_sample_pairs(&model, &samples, &cfg.inference)?, vec![]));
    }
    let list = match &a.sequences {
        Some(p) => Some(hpatches::read_sequence_list(p)?),
        None => None,
    };
    let (seqs, mut skipped) = hpatches::load_dataset(&a.dataset, list.as_deref())?;
    let pairs = match (&a.features, &a.checkpoint) {
        (Some(f), _) => {
            let (pairs, missing) = eval::load_feature_pairs(f, &seqs);
            skipped.extend(missing);
            pairs
        }
        (None, Some(ck)) => {
            let model = Model::load(ck, &Device::Cpu)?;
            eval::extract_sequence_pairs(&model, &seqs, &cfg.inference)?
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --features".into())),
    };
    Ok((pairs, skipped))
}

pub fn cmd_eval(cfg: &mut RunConfig, a: &EvalArgs, out: &Path) -> Result<Vec<MetricReport>> {
    if let Some(s) = a.ransac_seed {
        cfg.eval.ransac_seed = s;
    }
    let (pairs, skipped) = eval_pairs(cfg, a)?;
    if pairs.is_empty() {
        return Err(Error::InvalidValue(format!("{}: no pairs to evaluate", a.dataset.display())));
    }
    prepare_out(cfg, out)?;
    let mut reports = Vec::new();
    for mode in a.mode.modes() {
        let report = eval::report_from_features(&pairs, mode, &cfg.eval, skipped.clone());
        report.write_all(out, mode_stem(mode))?;
        print!("{}", report.to_table());
        reports.push(report);
    }
    Ok(reports)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(cfg, out)?;
    let report = gradcheck::run_default_suite(cfg.data.seed, &cfg.loss)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.pass {
        return Ok(());
    }
    let worst = report
        .loss_gradient
        .groups
        .iter()
        .max_by(|x, y| x.max_rel.total_cmp(&y.max_rel))
        .map(|g| format!("{} (max relative error {:.3e})", g.group, g.max_rel))
        .unwrap_or_default();
    Err(Error::InvalidValue(format!(
        "gradient check failed: positive-distance max abs {:.3e} at trial {}; worst loss group {worst}",
        report.positive_gradient.max_abs, report.positive_gradient.worst_trial
    )))
}

pub fn cmd_t_sweep(cfg: &mut RunConfig, a: &SweepArgs, out: &Path) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.optim.epochs = e;
    }
    cfg.validate()?;
    let base = Checkpoint::read(&a.checkpoint)?;
    cfg.model = base.model.clone();
    let train = dataset::load_dataset(&a.data)?;
    let held = dataset::load_dataset(&a.held_out)?;
    prepare_out(cfg, out)?;
    let report = temperature_sweep(&base, cfg, &train, &held, &a.temperatures)?;
    write_json(&out.join("t_sweep.json"), &report)?;
    let table = report.to_table();
    std::fs::write(out.join("t_sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Seed of a held-out set derived from a training seed.
pub fn held_out_seed(seed: u64) -> u64 {
    split_seed(seed, 77)
}

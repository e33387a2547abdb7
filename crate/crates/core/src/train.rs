//! Joint training loop.
//!
//! Every step encodes both views of each pair in one batch, samples
//! descriptors and attention at the precomputed correspondences, and
//! minimises `L_det + L_des` with Adam under a poly learning-rate decay.
//! The optimiser moments, the step counter and the parameters all go into
//! the checkpoint, and the batch order of every epoch is a pure function of
//! `(seed, epoch)`, so a resumed run retraces the uninterrupted one.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{sample_correspondences, split_seed, Correspondences, TrainingSample};
use crate::error::{Error, Result};
use crate::inference::sampling::sample_tensor;
use crate::losses::{atrip_loss_tensor, detector_loss_tensor};
use crate::model::{ops, Checkpoint, Model};

/// Parameter prefixes of the description branch (context module and head).
pub const DESCRIPTOR_PREFIXES: [&str; 2] = ["agca.", "describe."];

pub fn poly_lr(base: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step.min(total) as f64 / total as f64).powf(power)
}

/// Adam with bias correction; moments are kept per parameter name.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in params {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = g.detach();
            let m = match self.m.get(name) {
                Some(m) => (m.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?,
                None => g.affine(1.0 - self.beta1, 0.0)?,
            };
            let v = match self.v.get(name) {
                Some(v) => (v.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?,
                None => g.sqr()?.affine(1.0 - self.beta2, 0.0)?,
            };
            let denom = v.affine(1.0 / c2, 0.0)?.sqrt()?.affine(1.0, self.eps)?;
            let update = (m.affine(1.0 / c1, 0.0)? / denom)?;
            let next = (var.as_tensor().detach() - update.affine(lr, 0.0)?)?;
            var.set(&next)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<()> {
        for (k, t) in &self.m {
            ck.push(&format!("adam.m.{k}"), t)?;
        }
        for (k, t) in &self.v {
            ck.push(&format!("adam.v.{k}"), t)?;
        }
        ck.meta["adam_t"] = self.t.into();
        Ok(())
    }

    pub fn load_from(ck: &Checkpoint, params: &[(String, Var)]) -> Result<Self> {
        let mut adam = Self {
            t: ck.meta["adam_t"].as_u64().unwrap_or(0) as usize,
            ..Self::default()
        };
        for (name, var) in params {
            let dev = var.device();
            if let Some(m) = ck.tensor(&format!("adam.m.{name}"), dev)? {
                adam.m.insert(name.clone(), m);
            }
            if let Some(v) = ck.tensor(&format!("adam.v.{name}"), dev)? {
                adam.v.insert(name.clone(), v);
            }
        }
        Ok(adam)
    }
}

/// What a training run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainScope {
    /// Every parameter, loss `L_det + L_des`.
    Full,
    /// Context module and descriptor head on a frozen, detached backbone,
    /// loss `L_des`.
    DescriptorHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_det: f64,
    pub l_des: f64,
    pub l_total: f64,
}

/// Correspondences of every usable sample; pairs with fewer than two
/// surviving points are left out.
pub fn prepare(samples: &[TrainingSample], cfg: &RunConfig) -> Vec<(usize, Correspondences)> {
    samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match sample_correspondences(&s.pair, &s.teacher, &cfg.data.sampler) {
            Ok(c) => Some((i, c)),
            Err(e) => {
                log::warn!("pair {i} skipped: {e}");
                None
            }
        })
        .collect()
}

pub struct Trainer<'a> {
    pub model: &'a Model,
    pub cfg: RunConfig,
    pub scope: TrainScope,
    samples: &'a [TrainingSample],
    usable: Vec<(usize, Correspondences)>,
    params: Vec<(String, Var)>,
    pub adam: Adam,
    pub step: usize,
    pub log: Vec<StepLog>,
    /// Where a batch that produced a non-finite loss is written.
    pub dump_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, cfg: &RunConfig, samples: &'a [TrainingSample], scope: TrainScope) -> Result<Self> {
        cfg.validate()?;
        let usable = prepare(samples, cfg);
        if usable.is_empty() {
            return Err(Error::InvalidValue("no usable training pairs".into()));
        }
        let params = match scope {
            TrainScope::Full => model.params().all(),
            TrainScope::DescriptorHead => model.params().select(&DESCRIPTOR_PREFIXES),
        };
        Ok(Self {
            model,
            cfg: cfg.clone(),
            scope,
            samples,
            usable,
            params,
            adam: Adam::default(),
            step: 0,
            log: Vec::new(),
            dump_dir: None,
        })
    }

    pub fn usable_pairs(&self) -> usize {
        self.usable.len()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.usable.len().div_ceil(self.cfg.optim.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.cfg.optim.epochs
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        poly_lr(self.cfg.optim.learning_rate, step, self.total_steps(), self.cfg.optim.poly_power)
    }

    /// Positions into the usable list for a given global step.
    fn batch_at(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        let mut order: Vec<usize> = (0..self.usable.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.cfg.data.seed, 500_000 + epoch as u64));
        order.shuffle(&mut rng);
        let b = self.cfg.optim.batch_size;
        let start = (step % spe) * b;
        order[start..(start + b).min(order.len())].to_vec()
    }

    /// Loss of one batch, with the graph attached.
    pub fn batch_loss(&self, batch: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let dev = self.model.device();
        let n = batch.len();
        let (h, w) = {
            let p = &self.samples[self.usable[batch[0]].0].pair;
            (p.height(), p.width())
        };
        let mut planes = Vec::with_capacity(2 * n);
        for &k in batch.iter() {
            planes.push(ops::plane_tensor(&self.samples[self.usable[k].0].pair.image_a.data, h, w, dev)?);
        }
        for &k in batch.iter() {
            planes.push(ops::plane_tensor(&self.samples[self.usable[k].0].pair.image_b.data, h, w, dev)?);
        }
        let images = Tensor::cat(&planes, 0)?;
        let mut pyramid = self.model.encode(&images)?;
        if self.scope == TrainScope::DescriptorHead {
            pyramid = pyramid.detach();
        }
        let (desc, att, _) = self.model.describe(&pyramid)?;
        let mut l_des = Vec::with_capacity(n);
        for (r, &k) in batch.iter().enumerate() {
            let c = &self.usable[k].1;
            let pa: Vec<[f64; 2]> = c.points_a.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
            let da = ops::l2_normalize(&sample_tensor(&desc.d.get(r)?, &pa)?, 1)?;
            let db = ops::l2_normalize(&sample_tensor(&desc.d.get(n + r)?, &c.points_b)?, 1)?;
            let wa = sample_tensor(&att.w.get(r)?, &pa)?.squeeze(1)?;
            let wb = sample_tensor(&att.w.get(n + r)?, &c.points_b)?.squeeze(1)?;
            let (loss, _) = atrip_loss_tensor(&da, &db, &wa, &wb, &self.cfg.loss)?;
            l_des.push(loss);
        }
        let l_des = (Tensor::stack(&l_des, 0)?.sum_all()? / n as f64)?;
        let l_det = match self.scope {
            TrainScope::Full => {
                let heat = self.model.detect(&pyramid)?;
                let mut labels = Vec::with_capacity(2 * n);
                for &k in batch.iter() {
                    labels.push(self.samples[self.usable[k].0].labels_a.to_f32());
                }
                for &k in batch.iter() {
                    labels.push(self.samples[self.usable[k].0].labels_b.to_f32());
                }
                let labels = Tensor::from_vec(labels.concat(), (2 * n, 1, h, w), dev)?;
                detector_loss_tensor(&heat.prob, &labels, self.cfg.loss.bce_lambda)?
            }
            TrainScope::DescriptorHead => Tensor::zeros((), candle_core::DType::F32, dev)?,
        };
        let total = (&l_det + &l_des)?;
        Ok((total, l_det, l_des))
    }

    /// One optimisation step.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let batch = self.batch_at(self.step);
        let (total, l_det, l_des) = self.batch_loss(&batch)?;
        let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
        let entry = StepLog {
            step: self.step,
            epoch: self.step / self.steps_per_epoch(),
            lr: self.lr_at(self.step),
            l_det: scalar(&l_det)?,
            l_des: scalar(&l_des)?,
            l_total: scalar(&total)?,
        };
        if !entry.l_total.is_finite() {
            let path = self.dump_batch(&batch, &entry)?;
            return Err(Error::NonFinite(format!(
                "loss at step {} is {} (batch written to {})",
                entry.step,
                entry.l_total,
                path.display()
            )));
        }
        let grads = total.backward()?;
        self.adam.step(&self.params, &grads, entry.lr)?;
        self.step += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    fn dump_batch(&self, batch: &[usize], entry: &StepLog) -> Result<PathBuf> {
        let dir = self
            .dump_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir)
            .join(format!("nonfinite_step{:06}", entry.step));
        std::fs::create_dir_all(&dir)?;
        let mut info = Vec::new();
        for &k in batch {
            let (idx, c) = &self.usable[k];
            let s = &self.samples[*idx];
            s.pair.image_a.save(&dir.join(format!("pair{idx}_a.png")))?;
            s.pair.image_b.save(&dir.join(format!("pair{idx}_b.png")))?;
            info.push(serde_json::json!({
                "pair": idx,
                "homography": s.pair.homography,
                "points_a": c.points_a,
                "points_b": c.points_b,
            }));
        }
        let body = serde_json::json!({ "step": entry, "batch": info });
        std::fs::write(dir.join("batch.json"), serde_json::to_string_pretty(&body)?)?;
        Ok(dir)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.model.to_checkpoint()?;
        self.adam.save_into(&mut ck)?;
        ck.meta["step"] = self.step.into();
        ck.meta["epoch"] = (self.step / self.steps_per_epoch()).into();
        ck.meta["scope"] = serde_json::to_value(self.scope)?;
        ck.meta["temperature"] = self.cfg.loss.temperature.into();
        ck.meta["seed"] = self.cfg.data.seed.into();
        Ok(ck)
    }

    /// Restores parameters, optimiser state and the step counter.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        self.model.load_checkpoint(ck)?;
        self.adam = Adam::load_from(ck, &self.params)?;
        self.step = ck.meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint has no step counter".into()))? as usize;
        Ok(())
    }

    /// Trains to the end. With `out_dir`, writes a checkpoint after every
    /// epoch (`epoch_NNN.ckpt` and `last.ckpt`) and a JSON-lines step log.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let total = self.total_steps();
        let spe = self.steps_per_epoch();
        let mut log_file = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(
                    std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(d.join("train_log.jsonl"))?,
                )
            }
            None => None,
        };
        while self.step < total {
            let e = self.train_step()?;
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &e)?;
                f.write_all(b"\n")?;
            }
            if e.step % 10 == 0 || self.step == total {
                log::info!(
                    "step {}/{} epoch {} lr {:.2e} L_det {:.4} L_des {:.4} L_total {:.4}",
                    e.step + 1,
                    total,
                    e.epoch,
                    e.lr,
                    e.l_det,
                    e.l_des,
                    e.l_total
                );
            }
            if self.step % spe == 0 {
                if let Some(d) = out_dir {
                    let ck = self.checkpoint()?;
                    ck.write(&d.join(format!("epoch_{:03}.ckpt", self.step / spe)))?;
                    ck.write(&d.join("last.ckpt"))?;
                }
            }
        }
        Ok(())
    }
}

/// Mean `|w_i - w'_i|` over sampled correspondences of the given samples.
pub fn attention_consistency(model: &Model, samples: &[TrainingSample], cfg: &RunConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, c) in prepare(samples, cfg) {
        let s = &samples[i];
        let dev = model.device();
        let pair = &s.pair;
        let a = ops::plane_tensor(&pair.image_a.data, pair.height(), pair.width(), dev)?;
        let b = ops::plane_tensor(&pair.image_b.data, pair.height(), pair.width(), dev)?;
        let pyramid = model.encode(&Tensor::cat(&[&a, &b], 0)?)?;
        let (_, att, _) = model.describe(&pyramid)?;
        let pa: Vec<[f64; 2]> = c.points_a.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
        let wa = sample_tensor(&att.w.get(0)?, &pa)?.flatten_all()?.to_vec1::<f32>()?;
        let wb = sample_tensor(&att.w.get(1)?, &c.points_b)?.flatten_all()?.to_vec1::<f32>()?;
        for (x, y) in wa.iter().zip(&wb) {
            total += (x - y).abs() as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidValue("no correspondences to measure".into()));
    }
    Ok(total / count as f64)
}

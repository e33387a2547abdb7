//! Finite-difference verification of the triplet-loss gradients.
//!
//! Two suites:
//!
//! * the closed form `∂||w d - x⁺|| / ∂d = w (x - x⁺) / ||x - x⁺||` against
//!   central differences, compared in absolute error;
//! * autodiff gradients of the full tensor loss with respect to every
//!   descriptor and attention value against central differences of the
//!   plain `f64` loss, compared in relative error
//!   `|a - f| / max(|a|, |f|, 1e-6)`.
//!
//! Random instances that sit within `1e-3` of a kink (hinge boundary, a tie
//! between the two closest negatives, or a zero distance) are redrawn.

use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::triplet::{atrip_loss, atrip_loss_tensor, positive_distances, CorrespondenceBatch};
use crate::config::LossConfig;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const POSITIVE_ABS_TOL: f64 = 1e-6;
pub const LOSS_REL_TOL: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;
const KINK_GAP: f64 = 1e-3;

/// Signature of an analytic `∂||w d - x⁺|| / ∂d`.
pub type PositiveGradientFn = fn(f64, &[f64], &[f64]) -> Vec<f64>;

/// `w (x - x⁺) / ||x - x⁺||` with `x = w d`.
pub fn positive_distance_gradient(w: f64, d: &[f64], x_pos: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = d.iter().zip(x_pos).map(|(d, p)| w * d - p).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff.into_iter().map(|v| w * v / norm).collect()
}

fn positive_distance(w: f64, d: &[f64], x_pos: &[f64]) -> f64 {
    d.iter()
        .zip(x_pos)
        .map(|(d, p)| (w * d - p) * (w * d - p))
        .sum::<f64>()
        .sqrt()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = gaussian(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositiveGradientReport {
    pub trials: usize,
    pub max_abs: f64,
    pub tolerance: f64,
    pub worst_trial: usize,
    pub pass: bool,
}

/// Checks an analytic positive-distance gradient on random instances.
pub fn check_positive_gradient(
    trials: usize,
    dim: usize,
    seed: u64,
    analytic: PositiveGradientFn,
) -> PositiveGradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0usize, 0f64);
    let mut done = 0;
    while done < trials {
        let w = rng.random_range(0.2..3.0);
        let d = unit(&mut rng, dim);
        let x_pos: Vec<f64> = gaussian(&mut rng, dim);
        if positive_distance(w, &d, &x_pos) < KINK_GAP {
            continue;
        }
        let g = analytic(w, &d, &x_pos);
        for k in 0..dim {
            let mut dp = d.clone();
            let mut dm = d.clone();
            dp[k] += FD_STEP;
            dm[k] -= FD_STEP;
            let fd = (positive_distance(w, &dp, &x_pos) - positive_distance(w, &dm, &x_pos))
                / (2.0 * FD_STEP);
            let err = (g[k] - fd).abs();
            if err > worst.1 || err.is_nan() {
                worst = (done, err);
            }
        }
        done += 1;
    }
    PositiveGradientReport {
        trials,
        max_abs: worst.1,
        tolerance: POSITIVE_ABS_TOL,
        worst_trial: worst.0,
        pass: worst.1 < POSITIVE_ABS_TOL,
    }
}

/// Random batch with unit descriptors and attention in `[0.5, 2]`, redrawn
/// until it is at least `1e-3` away from every non-differentiable point.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, margin: f64) -> CorrespondenceBatch {
    loop {
        let desc_a: Vec<f64> = (0..n).flat_map(|_| unit(rng, dim)).collect();
        let desc_b: Vec<f64> = (0..n).flat_map(|_| unit(rng, dim)).collect();
        let att_a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let att_b: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let batch = CorrespondenceBatch::from_descriptors(dim, desc_a, desc_b, att_a, att_b)
            .expect("consistent layout");
        if is_smooth(&batch, margin) {
            return batch;
        }
    }
}

fn is_smooth(batch: &CorrespondenceBatch, margin: f64) -> bool {
    let n = batch.len();
    let pos = positive_distances(batch);
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                batch
                    .weighted_a(i)
                    .zip(batch.weighted_b(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        d.sort_by(f64::total_cmp);
        let neg = d[0];
        if pos[i] < KINK_GAP || neg < KINK_GAP || (pos[i] - neg + margin).abs() < KINK_GAP {
            return false;
        }
        if d.len() > 1 && d[1] - d[0] < KINK_GAP {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossGradientReport {
    pub trials: usize,
    pub n: usize,
    pub dim: usize,
    pub groups: Vec<GroupError>,
    pub max_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Autodiff gradient of the tensor loss for one batch, in the order
/// `desc_a, desc_b, att_a, att_b`.
pub fn autodiff_gradients(batch: &CorrespondenceBatch, cfg: &LossConfig) -> Result<[Vec<f64>; 4]> {
    let dev = Device::Cpu;
    let n = batch.len();
    let dim = batch.dim;
    let da = Var::from_slice(&batch.desc_a, (n, dim), &dev)?;
    let db = Var::from_slice(&batch.desc_b, (n, dim), &dev)?;
    let wa = Var::from_slice(&batch.att_a, n, &dev)?;
    let wb = Var::from_slice(&batch.att_b, n, &dev)?;
    let (loss, _) = atrip_loss_tensor(&da, &db, &wa, &wb, cfg)?;
    let grads = loss.backward()?;
    let get = |v: &Var| -> Result<Vec<f64>> {
        Ok(match grads.get(v.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; v.elem_count()],
        })
    };
    Ok([get(&da)?, get(&db)?, get(&wa)?, get(&wb)?])
}

/// Central differences of the plain loss for the same four groups.
pub fn finite_difference_gradients(batch: &CorrespondenceBatch, cfg: &LossConfig) -> Result<[Vec<f64>; 4]> {
    let mut out: [Vec<f64>; 4] = Default::default();
    for (g, slot) in out.iter_mut().enumerate() {
        let len = match g {
            0 => batch.desc_a.len(),
            1 => batch.desc_b.len(),
            2 => batch.att_a.len(),
            _ => batch.att_b.len(),
        };
        for k in 0..len {
            let eval = |delta: f64| -> Result<f64> {
                let mut b = batch.clone();
                let field = match g {
                    0 => &mut b.desc_a,
                    1 => &mut b.desc_b,
                    2 => &mut b.att_a,
                    _ => &mut b.att_b,
                };
                field[k] += delta;
                atrip_loss(&b, cfg)
            };
            slot.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
        }
    }
    Ok(out)
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_FLOOR)
}

/// Compares autodiff and finite-difference gradients of the full loss.
pub fn check_loss_gradient(
    trials: usize,
    n: usize,
    dim: usize,
    seed: u64,
    cfg: &LossConfig,
) -> Result<LossGradientReport> {
    let names = ["desc_a", "desc_b", "att_a", "att_b"];
    let mut groups: Vec<GroupError> = names
        .iter()
        .map(|g| GroupError {
            group: g.to_string(),
            max_abs: 0.0,
            max_rel: 0.0,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let batch = random_batch(&mut rng, n, dim, cfg.margin);
        let ad = autodiff_gradients(&batch, cfg)?;
        let fd = finite_difference_gradients(&batch, cfg)?;
        for (g, group) in groups.iter_mut().enumerate() {
            for (a, f) in ad[g].iter().zip(&fd[g]) {
                group.max_abs = group.max_abs.max((a - f).abs());
                group.max_rel = group.max_rel.max(relative_error(*a, *f));
            }
        }
    }
    let max_rel = groups.iter().map(|g| g.max_rel).fold(0.0, f64::max);
    Ok(LossGradientReport {
        trials,
        n,
        dim,
        groups,
        max_rel,
        tolerance: LOSS_REL_TOL,
        pass: max_rel < LOSS_REL_TOL,
    })
}

/// The two-point worked example: unit attention, `T = 15`,
/// `d = [(1,0), (0,1)]`, `d' = [(0.6,0.8), (0,1)]`.
pub fn worked_example() -> CorrespondenceBatch {
    CorrespondenceBatch::from_descriptors(
        2,
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.6, 0.8, 0.0, 1.0],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    )
    .expect("valid example")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub positive_gradient: PositiveGradientReport,
    pub loss_gradient: LossGradientReport,
    pub worked_example_loss: f64,
    pub pass: bool,
}

/// Default suite: 100 positive-gradient trials and 100 loss trials with
/// `N = 8`, `dim = 4`.
pub fn run_default_suite(seed: u64, cfg: &LossConfig) -> Result<GradcheckReport> {
    run_suite(seed, cfg, positive_distance_gradient)
}

pub fn run_suite(seed: u64, cfg: &LossConfig, analytic: PositiveGradientFn) -> Result<GradcheckReport> {
    let positive_gradient = check_positive_gradient(100, 4, seed, analytic);
    let loss_gradient = check_loss_gradient(100, 8, 4, seed.wrapping_add(1), cfg)?;
    let worked_example_loss = atrip_loss(&worked_example(), &LossConfig::default())?;
    let pass = positive_gradient.pass && loss_gradient.pass;
    Ok(GradcheckReport {
        positive_gradient,
        loss_gradient,
        worked_example_loss,
        pass,
    })
}

/// Keeps the tensor type in scope for callers building their own checks.
pub fn to_tensor(values: &[f64], shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, shape, &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_example() {
        // w = 2, x = (2, 0) so d = (1, 0); x+ = (0, 2)
        let g = positive_distance_gradient(2.0, &[1.0, 0.0], &[0.0, 2.0]);
        let s = 2f64.sqrt();
        assert!((g[0] - s).abs() < 1e-12 && (g[1] + s).abs() < 1e-12);
        // w = 1, x+ = 0: gradient is x itself
        let g = positive_distance_gradient(1.0, &[0.6, 0.8], &[0.0, 0.0]);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wrong_sign_is_caught() {
        fn flipped(w: f64, d: &[f64], x: &[f64]) -> Vec<f64> {
            positive_distance_gradient(w, d, x).into_iter().map(|v| -v).collect()
        }
        assert!(check_positive_gradient(10, 4, 0, positive_distance_gradient).pass);
        assert!(!check_positive_gradient(10, 4, 0, flipped).pass);
    }

    #[test]
    fn small_loss_suite_passes() {
        let r = check_loss_gradient(5, 6, 3, 9, &LossConfig::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

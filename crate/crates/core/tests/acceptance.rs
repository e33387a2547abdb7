//! Acceptance criteria. Runs every criterion and prints one PASS/FAIL line
//! for each. With ACCEPTANCE_STRICT=1 any failure makes the exit status
//! non-zero; ACCEPTANCE_ONLY=1,2,... runs a subset.
//!
//! cargo test --release --test acceptance

use std::path::Path;
use std::time::Instant;

use candle_core::{Device, Tensor};
use clap::Parser;
use ctxfeat::commands::{execute, Cli};
use ctxfeat::config::{HomographyParams, LossConfig, MatchMode, ModelConfig, RunConfig};
use ctxfeat::data::dataset::load_dataset;
use ctxfeat::data::pair::valid_mask;
use ctxfeat::data::sampler::cell_maxima;
use ctxfeat::data::{sample_correspondences, split_seed, Homography, Raster, TeacherHeatmaps, TrainingPair};
use ctxfeat::eval::{estimate_homography, evaluate_pair, extract_sample_pairs, report_from_features, FeaturePair, RansacParams};
use ctxfeat::inference::{extract_keypoints, KeypointSet};
use ctxfeat::losses::gradcheck::{autodiff_gradients, positive_distance_gradient, random_batch, worked_example};
use ctxfeat::losses::{atrip_loss, detector_loss, hardest_negatives, softmax_weights, CorrespondenceBatch};
use ctxfeat::model::Model;
use ctxfeat::sweep::SweepReport;
use ctxfeat::train::{attention_consistency, TrainScope, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(args: &[&str]) -> ctxfeat::Result<()> {
    let mut full = vec!["ctxfeat"];
    full.extend_from_slice(args);
    execute(&Cli::try_parse_from(full).expect("arguments parse"))
}

// ---------------------------------------------------------------------------
// independent oracles

fn weighted_distance(b: &CorrespondenceBatch, i: usize, j: usize) -> f64 {
    let d = b.dim;
    let mut s = 0.0;
    for k in 0..d {
        let x = b.att_a[i] * b.desc_a[i * d + k] - b.att_b[j] * b.desc_b[j * d + k];
        s += x * x;
    }
    s.sqrt()
}

fn brute_hardest(b: &CorrespondenceBatch) -> Vec<(usize, f64)> {
    let n = b.att_a.len();
    (0..n)
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in 0..n {
                if j != i {
                    let d = weighted_distance(b, i, j);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
            }
            best
        })
        .collect()
}

fn hinge_terms(b: &CorrespondenceBatch, margin: f64) -> Vec<f64> {
    brute_hardest(b)
        .iter()
        .enumerate()
        .map(|(i, &(_, neg))| (weighted_distance(b, i, i) - neg + margin).max(0.0))
        .collect()
}

fn random_unit_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> CorrespondenceBatch {
    let mut unit = || {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<_>>()
    };
    let desc_a: Vec<f64> = (0..n).flat_map(|_| unit()).collect();
    let desc_b: Vec<f64> = (0..n).flat_map(|_| unit()).collect();
    let att_a = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
    let att_b = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
    CorrespondenceBatch::from_descriptors(dim, desc_a, desc_b, att_a, att_b).unwrap()
}

/// Greedy keypoint NMS: best remaining score first, first row-major index
/// on ties, Chebyshev suppression.
fn greedy_nms(k: &Raster, alpha: f32, radius: usize, max_kp: usize) -> Vec<(usize, usize)> {
    let mut alive: Vec<(usize, usize, f32)> = Vec::new();
    for y in 0..k.height {
        for x in 0..k.width {
            let v = k.data[y * k.width + x];
            if v >= alpha {
                alive.push((x, y, v));
            }
        }
    }
    let mut out = Vec::new();
    while out.len() < max_kp && !alive.is_empty() {
        let mut best = 0;
        for (i, p) in alive.iter().enumerate() {
            let b = alive[best];
            if p.2 > b.2 || (p.2 == b.2 && (p.1, p.0) < (b.1, b.0)) {
                best = i;
            }
        }
        let b = alive[best];
        out.push((b.0, b.1));
        alive.retain(|p| p.0.abs_diff(b.0) > radius || p.1.abs_diff(b.1) > radius);
    }
    out
}

fn apply_h(h: &Homography, x: f64, y: f64) -> (f64, f64) {
    let m = h.to_rows();
    let w = m[6] * x + m[7] * y + m[8];
    ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
}

/// Cell maxima of a 400x400 map over 10 px cells, validity filter, ranking
/// by score then row-major index, Chebyshev NMS, top `n`.
fn ranking_oracle(map: &Raster, valid: &[bool], n: usize, radius: usize) -> Vec<[usize; 2]> {
    let cell = map.width / 40;
    let mut cand: Vec<(usize, usize, f32)> = Vec::new();
    for gy in 0..40 {
        for gx in 0..40 {
            let mut best: Option<(usize, usize, f32)> = None;
            for y in gy * cell..(gy + 1) * cell {
                for x in gx * cell..(gx + 1) * cell {
                    let v = map.data[y * map.width + x];
                    if best.is_none_or(|b| v > b.2) {
                        best = Some((x, y, v));
                    }
                }
            }
            let b = best.unwrap();
            if valid[b.1 * map.width + b.0] {
                cand.push(b);
            }
        }
    }
    cand.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    let mut kept: Vec<[usize; 2]> = Vec::new();
    for c in cand {
        if kept.iter().all(|k| k[0].abs_diff(c.0).max(k[1].abs_diff(c.1)) > radius) {
            kept.push([c.0, c.1]);
        }
    }
    kept.truncate(n);
    kept
}

// ---------------------------------------------------------------------------
// criteria 1-8

fn gradient_identity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_abs: f64 = 0.0;
    for _ in 0..100 {
        let dim = 8;
        let w: f64 = rng.random_range(0.5..3.0);
        let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xp: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = |d: &[f64]| -> f64 { d.iter().zip(&xp).map(|(a, b)| (w * a - b).powi(2)).sum::<f64>().sqrt() };
        let analytic = positive_distance_gradient(w, &d, &xp);
        for k in 0..dim {
            let h = 1e-6;
            let (mut up, mut dn) = (d.clone(), d.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            worst_abs = worst_abs.max((fd - analytic[k]).abs());
        }
    }
    let cfg = LossConfig::default();
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let b = random_batch(&mut rng, 8, 4, cfg.margin);
        let ad = autodiff_gradients(&b, &cfg).map_err(|e| e.to_string())?;
        let step = 1e-5;
        for (g, grads) in ad.iter().enumerate() {
            for (k, a) in grads.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut p = b.clone();
                    let field = match g {
                        0 => &mut p.desc_a,
                        1 => &mut p.desc_b,
                        2 => &mut p.att_a,
                        _ => &mut p.att_b,
                    };
                    field[k] += delta;
                    let weights = softmax_weights(&p.att_a, cfg.temperature);
                    hinge_terms(&p, cfg.margin).iter().zip(&weights).map(|(t, w)| t * w).sum::<f64>()
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                worst_rel = worst_rel.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst_abs < 1e-6 && worst_rel < 1e-4 && secs < 30.0,
        format!("positive-distance max abs {worst_abs:.2e}; loss max rel {worst_rel:.2e}; {secs:.1}s"),
    )
}

fn loss_oracle() -> Outcome {
    let t0 = Instant::now();
    let worked = atrip_loss(&worked_example(), &LossConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut largest = 0;
    for trial in 0..1000 {
        let n = if trial == 0 { 512 } else { rng.random_range(2..=512) };
        largest = largest.max(n);
        let b = random_unit_batch(&mut rng, n, 16);
        if hardest_negatives(&b).map_err(|e| e.to_string())? != brute_hardest(&b) {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        (worked - 0.4239).abs() <= 1e-4 && mismatches == 0 && secs < 60.0,
        format!("worked example {worked:.6}; {mismatches} mining mismatches in 1000 batches (N up to {largest}); {secs:.1}s"),
    )
}

fn softmax_normalisation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum: f64 = 0.0;
    for &t in &[0.1, 1.0, 15.0, 100.0] {
        for _ in 0..200 {
            let n = rng.random_range(1..600);
            let att: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..50.0)).collect();
            worst_sum = worst_sum.max((softmax_weights(&att, t).iter().sum::<f64>() - 1.0).abs());
        }
    }
    let mut worst_limit: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..64);
        let b = random_unit_batch(&mut rng, n, 8);
        let cfg = LossConfig {
            temperature: 1e6,
            ..LossConfig::default()
        };
        let terms = hinge_terms(&b, cfg.margin);
        let mean = terms.iter().sum::<f64>() / n as f64;
        let got = atrip_loss(&b, &cfg).map_err(|e| e.to_string())?;
        worst_limit = worst_limit.max((got - mean).abs());
    }
    check(
        worst_sum <= 1e-6 && worst_limit <= 1e-4,
        format!("max |sum - 1| {worst_sum:.2e}; max |L(T=1e6) - uniform mean| {worst_limit:.2e}"),
    )
}

fn detector_oracle() -> Outcome {
    let hand = detector_loss(&[0.5; 4], &[1.0, 0.0, 0.0, 0.0], 200.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..500);
        let k: Vec<f32> = (0..n).map(|_| rng.random_range(0.001f32..0.999)).collect();
        let g: Vec<f32> = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        let bce: f64 = k
            .iter()
            .zip(&g)
            .map(|(&k, &g)| if g > 0.5 { -(k as f64).ln() } else { -(1.0 - k as f64).ln() })
            .sum::<f64>()
            / n as f64;
        worst = worst.max((detector_loss(&k, &g, 1.0).map_err(|e| e.to_string())? - bce).abs());
    }
    check(
        (hand - 35.177).abs() <= 1e-3 && worst <= 1e-7,
        format!("2x2 case {hand:.4}; lambda = 1 vs mean BCE max diff {worst:.2e}"),
    )
}

fn random_model_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let widths = [[4, 8, 8, 8], [8, 16, 32, 32], [6, 12, 16, 24], [8, 8, 16, 16]];
    let (pool, patch) = [(16, 4), (16, 8), (32, 8), (64, 16), (32, 16)][rng.random_range(0..5)];
    let heads = [1, 2, 4][rng.random_range(0..3)];
    ModelConfig {
        backbone_channels: widths[rng.random_range(0..widths.len())],
        agca_pool_size: pool,
        agca_patch_size: patch,
        agca_embed_dim: [32, 64, 128][rng.random_range(0..3)],
        agca_heads: heads,
        agca_depth: rng.random_range(1..=2),
        agca_mlp_ratio: [1.0, 2.0][rng.random_range(0..2)],
        dilation_rates: [rng.random_range(1..4), rng.random_range(4..8), rng.random_range(8..12)],
        fusion: if rng.random_bool(0.5) {
            ctxfeat::config::FusionMode::Softmax
        } else {
            ctxfeat::config::FusionMode::Raw
        },
        ..ModelConfig::toy()
    }
}

fn max_abs(t: &Tensor) -> f32 {
    t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
}

fn shape_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dev = Device::Cpu;
    let mut problems = Vec::new();
    let mut worst_norm: f32 = 0.0;
    let mut min_w = f32::INFINITY;
    let mut worst_gate: f32 = 0.0;
    for case in 0..50 {
        let cfg = random_model_config(&mut rng);
        let (h, w) = (8 * rng.random_range(4..=12), 8 * rng.random_range(4..=12));
        let b = rng.random_range(1..=2);
        let model = Model::new(&cfg, case, &dev).map_err(|e| e.to_string())?;
        let img = Tensor::rand(0f32, 1f32, (b, 1, h, w), &dev).unwrap();
        let p = model.encode(&img).map_err(|e| e.to_string())?;
        let c = cfg.backbone_channels;
        let want = [(c[0], h, w), (c[1], h / 2, w / 2), (c[2], h / 4, w / 4), (c[3], h / 8, w / 8)];
        for (lvl, (t, (ch, hh, ww))) in p.levels().iter().zip(want).enumerate() {
            if t.dims() != [b, ch, hh, ww] {
                problems.push(format!("case {case}: level {} is {:?}", lvl + 1, t.dims()));
            }
        }
        let out = model.heads(&p).map_err(|e| e.to_string())?;
        if out.descriptors.d.dims() != [b, 128, h / 4, w / 4] || out.attention.w.dims() != [b, 1, h / 4, w / 4] {
            problems.push(format!("case {case}: D {:?} W {:?}", out.descriptors.d.dims(), out.attention.w.dims()));
        }
        if out.heatmaps.prob.dims() != [b, 1, h, w] {
            problems.push(format!("case {case}: K {:?}", out.heatmaps.prob.dims()));
        }
        let norms = out.descriptors.d.sqr().unwrap().sum(1).unwrap().sqrt().unwrap();
        worst_norm = worst_norm.max(max_abs(&(norms - 1.0).unwrap()));
        let wmin = out.attention.w.flatten_all().unwrap().min(0).unwrap().to_scalar::<f32>().unwrap();
        min_w = min_w.min(wmin);

        // a gate that is zero everywhere leaves D independent of the context
        let ps = model.params();
        let zero = |name: &str, value: f32| {
            let v = ps.get(name).unwrap();
            v.set(&Tensor::full(value, v.dims(), &dev).unwrap()).unwrap();
        };
        zero("agca.gate.weight", 0.0);
        zero("agca.gate.bias", -1.0);
        let d0 = model.heads(&p).map_err(|e| e.to_string())?.descriptors.d;
        let pe = ps.get("agca.patch_embed.weight").unwrap();
        pe.set(&Tensor::randn(0f32, 1f32, pe.dims(), &dev).unwrap()).unwrap();
        let out1 = model.heads(&p).map_err(|e| e.to_string())?;
        worst_gate = worst_gate.max(max_abs(&out1.global.merged().unwrap()));
        worst_gate = worst_gate.max(max_abs(&(out1.descriptors.d - d0).unwrap()));
    }
    if worst_norm > 1e-5 {
        problems.push(format!("descriptor norm off by {worst_norm:.2e}"));
    }
    if min_w <= 0.0 {
        problems.push(format!("attention minimum {min_w}"));
    }
    if worst_gate != 0.0 {
        problems.push(format!("zero gate leaks {worst_gate:.2e}"));
    }
    let detail = format!(
        "50 configs; max |‖d‖ - 1| {worst_norm:.2e}; min W {min_w:.4}; zero-gate leak {worst_gate:.1e}{}",
        if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
    );
    check(problems.is_empty(), detail)
}

fn sampler_conformance() -> Outcome {
    let cfg = RunConfig::default();
    let sc = &cfg.data.sampler;
    let mut problems = Vec::new();

    // uniform heatmap, full valid mask
    let h = Homography::random(6, &cfg.data.homography, 400, 400).map_err(|e| e.to_string())?;
    let pair = TrainingPair {
        image_a: Raster::new(400, 400),
        image_b: Raster::new(400, 400),
        homography: h,
        valid_mask: vec![true; 400 * 400],
        origin: [0, 0],
    };
    let flat = Raster::filled(400, 400, 0.7);
    let teacher = TeacherHeatmaps {
        m1: flat.clone(),
        m2: flat.clone(),
        m1_warp: flat.clone(),
        compound: flat.clone(),
    };
    let cand = cell_maxima(&flat, sc.grid);
    let cells: std::collections::BTreeSet<(usize, usize)> = cand.iter().map(|p| (p.0 / 10, p.1 / 10)).collect();
    if cand.len() != 1600 || cells.len() != 1600 {
        problems.push(format!("{} candidates over {} cells", cand.len(), cells.len()));
    }
    let c = sample_correspondences(&pair, &teacher, sc).map_err(|e| e.to_string())?;
    let mut min_sep = usize::MAX;
    for (i, p) in c.points_a.iter().enumerate() {
        for q in &c.points_a[i + 1..] {
            min_sep = min_sep.min(p[0].abs_diff(q[0]).max(p[1].abs_diff(q[1])));
        }
    }
    let mut warp_err: f64 = 0.0;
    for (p, q) in c.points_a.iter().zip(&c.points_b) {
        let (x, y) = apply_h(&h, p[0] as f64, p[1] as f64);
        warp_err = warp_err.max((x - q[0]).abs()).max((y - q[1]).abs());
    }
    if c.len() != 400 || min_sep <= 4 || warp_err > 1e-6 {
        problems.push(format!("uniform map: {} points, min separation {min_sep}, warp error {warp_err:.1e}", c.len()));
    }

    // random heatmaps against the ranking oracle
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = 0;
    for k in 0..100 {
        let h = Homography::random(100 + k, &cfg.data.homography, 400, 400).map_err(|e| e.to_string())?;
        let mut map = Raster::new(400, 400);
        for v in map.data.iter_mut() {
            // coarse values make ties between cells common
            *v = (rng.random_range(0..64) as f32) / 32.0;
        }
        let valid = valid_mask(&h, 400, 400);
        let pair = TrainingPair {
            image_a: Raster::new(400, 400),
            image_b: Raster::new(400, 400),
            homography: h,
            valid_mask: valid.clone(),
            origin: [0, 0],
        };
        let teacher = TeacherHeatmaps {
            m1: map.clone(),
            m2: map.clone(),
            m1_warp: map.clone(),
            compound: map.clone(),
        };
        let got = sample_correspondences(&pair, &teacher, sc).map_err(|e| e.to_string())?;
        if got.points_a != ranking_oracle(&map, &valid, sc.n_points, sc.nms_radius) {
            disagreements += 1;
        }
    }
    if disagreements > 0 {
        problems.push(format!("{disagreements} of 100 random maps disagree with the ranking oracle"));
    }
    check(
        problems.is_empty(),
        format!(
            "uniform map: {} points, min separation {min_sep} px, warp error {warp_err:.1e}; oracle agreement {}/100{}",
            c.len(),
            100 - disagreements,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn nms_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let at = 0.9f32;
    let below = at.next_down();
    let mut mismatches = 0;
    let mut boundary_pixels = 0usize;
    for trial in 0..1000 {
        let mut k = Raster::new(64, 64);
        for v in k.data.iter_mut() {
            *v = match rng.random_range(0..10) {
                0 => at,
                1 => below,
                2 => 0.95,
                3..=5 => rng.random_range(0.85f32..1.0),
                _ => rng.random::<f32>(),
            };
            if *v == at {
                boundary_pixels += 1;
            }
        }
        let max_kp = if trial % 4 == 0 { rng.random_range(1..60) } else { usize::MAX };
        let got: Vec<(usize, usize)> = extract_keypoints(&k, 0.9, 4, max_kp).iter().map(|p| (p.x, p.y)).collect();
        if got != greedy_nms(&k, at, 4, max_kp) {
            mismatches += 1;
        }
    }
    // an isolated pixel exactly at alpha is kept, one just below is not
    let mut edge = Raster::new(64, 64);
    edge.set(10, 10, at);
    edge.set(40, 40, below);
    let edge_ok = extract_keypoints(&edge, 0.9, 4, 100).iter().map(|p| (p.x, p.y)).collect::<Vec<_>>() == vec![(10, 10)];
    check(
        mismatches == 0 && edge_ok,
        format!("{mismatches} mismatches in 1000 maps ({boundary_pixels} pixels exactly at alpha); boundary case {}", if edge_ok { "ok" } else { "wrong" }),
    )
}

fn random_keypoints(rng: &mut ChaCha8Rng, n: usize) -> KeypointSet {
    let mut k = KeypointSet::empty("self", 120, 160, 32);
    for _ in 0..n {
        k.coords.push([rng.random_range(0..160) as f64, rng.random_range(0..120) as f64]);
        k.scores.push(1.0);
        let v: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        k.descriptors.extend(v.iter().map(|x| x / norm));
        k.weights.push(rng.random_range(0.2f32..2.0));
    }
    k
}

fn corner_error_of(est: &Homography, gt: &Homography, w: usize, h: usize) -> f64 {
    let corners = [(0.0, 0.0), ((w - 1) as f64, 0.0), ((w - 1) as f64, (h - 1) as f64), (0.0, (h - 1) as f64)];
    corners
        .iter()
        .map(|&(x, y)| {
            let (a, b) = apply_h(est, x, y);
            let (c, d) = apply_h(gt, x, y);
            (a - c).hypot(b - d)
        })
        .sum::<f64>()
        / 4.0
}

fn metric_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = RunConfig::default().eval;
    let mut self_ok = true;
    for _ in 0..20 {
        let n = rng.random_range(8..200);
        let k = random_keypoints(&mut rng, n);
        for mode in [MatchMode::Plain, MatchMode::AttentionWeighted] {
            let e = evaluate_pair("self", "self", &k, &k, &Homography::identity(), mode, &cfg);
            self_ok &= e.mma.iter().all(|&m| m == 1.0) && e.matching_score == Some(1.0) && e.ha.iter().all(|&s| s);
        }
    }
    let params = HomographyParams::default();
    let (w, h) = (320, 240);
    let mut clean: f64 = 0.0;
    let mut noisy: f64 = 0.0;
    for trial in 0..30 {
        let gt = Homography::random(500 + trial, &params, w, h).map_err(|e| e.to_string())?;
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut outliers = Vec::new();
        while src.len() < 150 {
            let p = [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)];
            let q = apply_h(&gt, p[0], p[1]);
            src.push(p);
            dst.push([q.0, q.1]);
            outliers.push(if src.len() % 3 == 0 {
                [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)]
            } else {
                [q.0, q.1]
            });
        }
        let seed = RansacParams { seed: trial, ..RansacParams::default() };
        let fit = estimate_homography(&src, &dst, &seed).map_err(|e| e.to_string())?;
        clean = clean.max(corner_error_of(&fit.homography, &gt, w, h));
        let fit = estimate_homography(&src, &outliers, &seed).map_err(|e| e.to_string())?;
        noisy = noisy.max(corner_error_of(&fit.homography, &gt, w, h));
    }
    check(
        self_ok && clean < 1e-6 && noisy < 1.0,
        format!("self-pairs {}; noise-free corner error {clean:.1e}; 33% outliers corner error {noisy:.2e}", if self_ok { "perfect" } else { "imperfect" }),
    )
}

// ---------------------------------------------------------------------------
// criteria 9-11 share one training run

struct Trained {
    cfg: RunConfig,
    held: Vec<ctxfeat::data::TrainingSample>,
    pairs: Vec<FeaturePair>,
    consistency: (f64, f64),
    train_secs: f64,
}

fn train_toy(work: &Path) -> Result<Trained, String> {
    let cfg = RunConfig::toy();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let train_dir = work.join("train_set");
    let held_dir = work.join("held_out");
    let held_seed = split_seed(cfg.data.seed, 77).to_string();
    run_cli(&["synth", "--preset", "toy", "--out", &s(&train_dir)]).map_err(|e| e.to_string())?;
    run_cli(&["synth", "--preset", "toy", "--pairs", "50", "--seed", &held_seed, "--out", &s(&held_dir)]).map_err(|e| e.to_string())?;
    let train = load_dataset(&train_dir).map_err(|e| e.to_string())?;
    let held = load_dataset(&held_dir).map_err(|e| e.to_string())?;

    let t0 = Instant::now();
    let model = Model::new(&cfg.model, cfg.data.seed, &Device::Cpu).map_err(|e| e.to_string())?;
    let before = attention_consistency(&model, &held, &cfg).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(&model, &cfg, &train, TrainScope::Full).map_err(|e| e.to_string())?;
    trainer.run(None).map_err(|e| e.to_string())?;
    let train_secs = t0.elapsed().as_secs_f64();
    let after = attention_consistency(&model, &held, &cfg).map_err(|e| e.to_string())?;
    model.save(&work.join("toy.ckpt")).map_err(|e| e.to_string())?;
    let pairs = extract_sample_pairs(&model, &held, &cfg.inference).map_err(|e| e.to_string())?;
    Ok(Trained {
        cfg,
        held,
        pairs,
        consistency: (before, after),
        train_secs,
    })
}

fn toy_training(t: &Trained) -> Outcome {
    let r = report_from_features(&t.pairs, t.cfg.inference.match_mode, &t.cfg.eval, vec![]);
    let mma = r.mma_at(3.0).unwrap_or(0.0);
    let ha = r.ha_at(3.0).unwrap_or(0.0);
    let (before, after) = t.consistency;
    let drop = 1.0 - after / before;
    check(
        mma >= 0.5 && ha >= 0.5 && drop >= 0.3 && t.train_secs <= 1800.0,
        format!(
            "MMA@3 {mma:.3}, HA@3 {ha:.3} on {} held-out pairs ({:.1} keypoints, {:.1} matches per pair); attention consistency {before:.4} -> {after:.4} ({:+.0}%); trained in {:.0}s",
            t.held.len(),
            r.overall.mean_keypoints,
            r.overall.mean_matches,
            -100.0 * drop,
            t.train_secs
        ),
    )
}

fn temperature_sweep(work: &Path) -> Outcome {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let out = work.join("t_sweep");
    // the head is retrained on the toy schedule
    let epochs = RunConfig::toy().optim.epochs.to_string();
    run_cli(&[
        "t-sweep", "--preset", "toy",
        "--data", &s(&work.join("train_set")),
        "--held-out", &s(&work.join("held_out")),
        "--checkpoint", &s(&work.join("toy.ckpt")),
        "--temperatures", "1,15,100",
        "--epochs", &epochs,
        "--out", &s(&out),
    ])
    .map_err(|e| e.to_string())?;
    let report: SweepReport = serde_json::from_str(&std::fs::read_to_string(out.join("t_sweep.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("T={}: MMA@3 {:.4} M.S. {:.4}", r.temperature, r.mma, r.matching_score))
        .collect();
    check(report.mma_falls && report.score_rises, rows.join("; "))
}

fn mode_ablation(t: &Trained) -> Outcome {
    let plain = report_from_features(&t.pairs, MatchMode::Plain, &t.cfg.eval, vec![]);
    let weighted = report_from_features(&t.pairs, MatchMode::AttentionWeighted, &t.cfg.eval, vec![]);
    let (mp, mw) = (plain.mma_at(3.0).unwrap_or(0.0), weighted.mma_at(3.0).unwrap_or(0.0));
    let unit: Vec<FeaturePair> = t
        .pairs
        .iter()
        .map(|p| FeaturePair {
            a: p.a.with_unit_weights(),
            b: p.b.with_unit_weights(),
            ..p.clone()
        })
        .collect();
    let up = report_from_features(&unit, MatchMode::Plain, &t.cfg.eval, vec![]);
    let uw = report_from_features(&unit, MatchMode::AttentionWeighted, &t.cfg.eval, vec![]);
    let coincide = up.overall == uw.overall && up.pairs.iter().zip(&uw.pairs).all(|(a, b)| a.matches == b.matches && a.mma == b.mma);
    check(
        mp != mw && coincide,
        format!("MMA@3 plain {mp:.4} vs weighted {mw:.4}; unit weights {}", if coincide { "coincide" } else { "differ" }),
    )
}

fn main() {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let wanted = |i: usize| only.is_empty() || only.contains(&i);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let fast: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "gradient identity", gradient_identity),
        (2, "loss oracle", loss_oracle),
        (3, "softmax normalisation", softmax_normalisation),
        (4, "detector loss", detector_oracle),
        (5, "shape and normalisation suite", shape_suite),
        (6, "sampler conformance", sampler_conformance),
        (7, "keypoint NMS oracle", nms_oracle),
        (8, "metric sanity", metric_sanity),
    ];
    for (i, name, f) in fast {
        if wanted(i) {
            let r = f();
            println!("{} criterion {i:>2} {name}: {}", if r.is_ok() { "PASS" } else { "FAIL" }, r.as_ref().unwrap_or_else(|e| e));
            results.push((i, name, r));
        }
    }
    if [9, 10, 11].iter().any(|&i| wanted(i)) {
        let work = tempfile::tempdir().expect("temp dir");
        match train_toy(work.path()) {
            Ok(t) => {
                let late: [(usize, &str, Box<dyn Fn() -> Outcome>); 3] = [
                    (9, "end-to-end toy training", Box::new(|| toy_training(&t))),
                    (10, "temperature sweep", Box::new(|| temperature_sweep(work.path()))),
                    (11, "matching-mode ablation", Box::new(|| mode_ablation(&t))),
                ];
                for (i, name, f) in late {
                    if wanted(i) {
                        let r = f();
                        println!("{} criterion {i:>2} {name}: {}", if r.is_ok() { "PASS" } else { "FAIL" }, r.as_ref().unwrap_or_else(|e| e));
                        results.push((i, name, r));
                    }
                }
            }
            Err(e) => {
                for (i, name) in [(9, "end-to-end toy training"), (10, "temperature sweep"), (11, "matching-mode ablation")] {
                    if wanted(i) {
                        println!("FAIL criterion {i:>2} {name}: training failed: {e}");
                        results.push((i, name, Err(e.clone())));
                    }
                }
            }
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

//! Subcommand behaviour, driven through the same parser as the binary.

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use ctxfeat::commands::{execute, Cli};
use ctxfeat::config::RunConfig;
use ctxfeat::data::dataset::read_manifest;
use ctxfeat::data::{Homography, Raster, Scene};
use ctxfeat::eval::hpatches::write_sequence;
use ctxfeat::eval::MetricReport;
use ctxfeat::inference::KeypointSet;
use ctxfeat::model::Model;
use ctxfeat::train::StepLog;

fn run(args: &[&str]) -> ctxfeat::Result<()> {
    let mut full = vec!["ctxfeat"];
    full.extend_from_slice(args);
    execute(&Cli::try_parse_from(full).expect("arguments parse"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn toy_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("init.ckpt");
    Model::new(&RunConfig::toy().model, 0, &candle_core::Device::Cpu)
        .unwrap()
        .save(&path)
        .unwrap();
    path
}

fn read_log(path: &Path) -> Vec<StepLog> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_is_deterministic_and_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run(&["synth", "--preset", "toy", "--seed", "11", "--pairs", "10", "--out", s(out)]).unwrap();
    }
    assert_eq!(read_manifest(&a).unwrap().len(), 10);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn synth_of_zero_pairs_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    run(&["synth", "--preset", "toy", "--pairs", "0", "--out", s(dir.path())]).unwrap();
    assert!(read_manifest(dir.path()).unwrap().is_empty());
}

#[test]
fn default_homographies_keep_most_of_the_view() {
    let dir = tempfile::tempdir().unwrap();
    run(&["synth", "--pairs", "12", "--out", s(dir.path())]).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let coverage = summary["mean_coverage"].as_f64().unwrap();
    assert!(coverage > 0.6, "mean coverage {coverage}");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    run(&["synth", "--preset", "toy", "--seed", "5", "--pairs", "3", "--set", "data.crop=96", "--out", s(&first)]).unwrap();
    let again = dir.path().join("again");
    let cfg = first.join("config.txt");
    run(&["synth", "--config", s(&cfg), "--out", s(&again)]).unwrap();
    assert_eq!(files(&first), files(&again));
    assert_eq!(RunConfig::load(&cfg).unwrap().data.crop, 96);
}

#[test]
fn binary_reports_errors_with_a_prefix_and_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_corpus");
    let out = Process::new(env!("CARGO_BIN_EXE_ctxfeat"))
        .args(["synth", "--corpus", s(&missing), "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().any(|l| l.starts_with("error: ")), "stderr: {err}");

    let out = Process::new(env!("CARGO_BIN_EXE_ctxfeat"))
        .args(["gradcheck", "--set", "loss.nonsense=1"])
        .env("CTXFEAT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_ctxfeat"))
        .args(["gradcheck", "--threads", "1"])
        .env("CTXFEAT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["loss_gradient"]["max_rel"].as_f64().unwrap() < 1e-4);
    assert!((report["worked_example_loss"].as_f64().unwrap() - 0.4239).abs() < 1e-4);
    assert!(dir.path().join("gradcheck/config.txt").is_file());
}

#[test]
fn training_resumes_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["synth", "--preset", "toy", "--pairs", "4", "--set", "data.crop=64", "--out", s(&data)]).unwrap();
    let full = dir.path().join("full");
    let common = ["--preset", "toy", "--set", "data.crop=64", "--set", "data.sampler.grid=8", "--set", "data.sampler.n_points=32"];
    let mut args = vec!["train", "--data", s(&data), "--epochs", "2", "--out", s(&full)];
    args.extend_from_slice(&common);
    run(&args).unwrap();
    let resumed = dir.path().join("resumed");
    let ck = full.join("epoch_001.ckpt");
    let mut args = vec!["train", "--data", s(&data), "--epochs", "2", "--resume", s(&ck), "--out", s(&resumed)];
    args.extend_from_slice(&common);
    run(&args).unwrap();

    let a = read_log(&full.join("train_log.jsonl"));
    let b = read_log(&resumed.join("train_log.jsonl"));
    assert_eq!(a.len(), 4);
    assert_eq!(b.len(), 2);
    for (x, y) in a[2..].iter().zip(&b) {
        assert_eq!(x.step, y.step);
        assert!((x.l_total - y.l_total).abs() < 1e-6, "{} vs {}", x.l_total, y.l_total);
        assert!((x.l_total - x.l_det - x.l_des).abs() < 1e-5);
    }
    assert!(full.join("epoch_002.ckpt").is_file() && full.join("last.ckpt").is_file());
}

#[test]
fn extract_skips_unreadable_images_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let ck = toy_checkpoint(dir.path());
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    Scene::random(96, 64, 3).render().save(&images.join("scene.png")).unwrap();
    Raster::filled(64, 64, 0.5).save(&images.join("blank.png")).unwrap();
    std::fs::write(images.join("broken.png"), b"not an image").unwrap();

    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for o in [&o1, &o2] {
        run(&["extract", "--preset", "toy", "--checkpoint", s(&ck), s(&images), "--out", s(o)]).unwrap();
    }
    assert!(!o1.join("broken.png.feat").exists());
    for f in ["scene.png.feat", "blank.png.feat"] {
        assert_eq!(std::fs::read(o1.join(f)).unwrap(), std::fs::read(o2.join(f)).unwrap());
    }
    let blank = KeypointSet::read(&o1.join("blank.png.feat")).unwrap();
    assert!(blank.len() <= 5, "{} keypoints on a blank image", blank.len());

    let only_broken = dir.path().join("broken.png");
    std::fs::copy(images.join("broken.png"), &only_broken).unwrap();
    assert!(run(&["extract", "--checkpoint", s(&ck), s(&only_broken), "--out", s(&dir.path().join("o3"))]).is_err());
}

/// Two sequences whose targets equal the reference, plus one with a bad
/// homography file.
fn self_pair_sequences(root: &Path) {
    for (i, name) in ["i_same", "v_same"].iter().enumerate() {
        let img = Scene::random(96, 96, 20 + i as u64).render();
        write_sequence(root, name, &[&img, &img, &img], &[Homography::identity(), Homography::identity()]).unwrap();
    }
    let img = Scene::random(96, 96, 30).render();
    write_sequence(root, "v_broken", &[&img, &img], &[Homography::identity()]).unwrap();
    std::fs::write(root.join("v_broken/H_1_2"), "1 0 0\n0 1\n").unwrap();
}

#[test]
fn eval_of_self_pairs_is_perfect_and_lists_skipped_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("seqs");
    self_pair_sequences(&root);
    let ck = toy_checkpoint(dir.path());
    let out = dir.path().join("eval");
    run(&[
        "eval", "--preset", "toy", "--set", "inference.alpha=0", "--set", "inference.max_keypoints=150",
        "--dataset", s(&root), "--checkpoint", s(&ck), "--out", s(&out),
    ])
    .unwrap();
    for stem in ["report_plain", "report_weighted"] {
        let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(out.join(format!("{stem}.json"))).unwrap()).unwrap();
        assert_eq!(r.overall.pairs, 4);
        assert_eq!(r.mma_at(3.0), Some(1.0));
        assert_eq!(r.ha_at(3.0), Some(1.0));
        assert_eq!(r.overall.matching_score, 1.0);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].name, "v_broken");
        assert!(out.join(format!("{stem}.txt")).is_file() && out.join(format!("{stem}_mma.svg")).is_file());
    }
}

#[test]
fn eval_from_exported_features_matches_eval_from_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("seqs");
    self_pair_sequences(&root);
    let ck = toy_checkpoint(dir.path());
    let feats = dir.path().join("feats");
    let flags = ["--preset", "toy", "--set", "inference.alpha=0.3", "--set", "inference.max_keypoints=100"];
    let mut args = vec!["extract", "--checkpoint", s(&ck), s(&root), "--out", s(&feats)];
    args.extend_from_slice(&flags);
    run(&args).unwrap();
    let list = dir.path().join("list.txt");
    std::fs::write(&list, "i_same\nv_same\n").unwrap();
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    let mut args = vec!["eval", "--dataset", s(&root), "--features", s(&feats), "--sequences", s(&list), "--mode", "plain", "--out", s(&e1)];
    args.extend_from_slice(&flags);
    run(&args).unwrap();
    let mut args = vec!["eval", "--dataset", s(&root), "--checkpoint", s(&ck), "--sequences", s(&list), "--mode", "plain", "--out", s(&e2)];
    args.extend_from_slice(&flags);
    run(&args).unwrap();
    let load = |d: &Path| -> MetricReport { serde_json::from_str(&std::fs::read_to_string(d.join("report_plain.json")).unwrap()).unwrap() };
    let (r1, r2) = (load(&e1), load(&e2));
    assert_eq!(r1.overall, r2.overall);
    assert!(r1.skipped.is_empty());
}

#[test]
fn match_writes_one_file_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let ck = toy_checkpoint(dir.path());
    let img = dir.path().join("a.png");
    Scene::random(64, 64, 8).render().save(&img).unwrap();
    let feats = dir.path().join("f");
    run(&["extract", "--preset", "toy", "--set", "inference.alpha=0.2", "--checkpoint", s(&ck), s(&img), "--out", s(&feats)]).unwrap();
    let f = feats.join("a.png.feat");
    let out = dir.path().join("m");
    run(&["match", s(&f), s(&f), "--mode", "both", "--out", s(&out)]).unwrap();
    let n = KeypointSet::read(&f).unwrap().len();
    for file in ["matches_plain.txt", "matches_weighted.txt"] {
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        assert!(text.starts_with("ctxfeat-matches 1\n"));
        // a set matched with itself pairs every keypoint with itself
        assert_eq!(text.lines().count(), 3 + n);
    }
}

#[test]
fn t_sweep_writes_a_report_row_per_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let held = dir.path().join("held");
    let small = ["--preset", "toy", "--set", "data.crop=64", "--set", "data.sampler.grid=8", "--set", "data.sampler.n_points=32"];
    let mut args = vec!["synth", "--pairs", "2", "--out", s(&data)];
    args.extend_from_slice(&small);
    run(&args).unwrap();
    let mut args = vec!["synth", "--pairs", "2", "--seed", "99", "--out", s(&held)];
    args.extend_from_slice(&small);
    run(&args).unwrap();
    let ck = toy_checkpoint(dir.path());
    let out = dir.path().join("sweep");
    let mut args = vec![
        "t-sweep", "--data", s(&data), "--held-out", s(&held), "--checkpoint", s(&ck),
        "--temperatures", "100,1", "--epochs", "1", "--set", "inference.alpha=0.3", "--out", s(&out),
    ];
    args.extend_from_slice(&small);
    run(&args).unwrap();
    let report: ctxfeat::sweep::SweepReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("t_sweep.json")).unwrap()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.temperature).collect::<Vec<_>>(), vec![1.0, 100.0]);
    assert!(out.join("t_sweep.txt").is_file());
}

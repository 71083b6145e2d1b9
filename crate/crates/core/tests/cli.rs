//! The `segkc` binary: data generation, training, evaluation and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn segkc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segkc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = segkc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn miou(table: &str) -> f64 {
    let line = table.lines().find(|l| l.starts_with("miou,")).unwrap();
    line[5..].parse().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "image_height=16", "--set", "image_width=16", "--set", "dataset_size=32", "--set", "val_size=8",
    "--set", "batch_size=2", "--set", "iters_per_epoch=3", "--set", "junior_width=4", "--set", "senior_width=8",
    "--set", "save_preds=1",
];

fn train(out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--out", path(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", path(d), "--size", "12", "--seed", "5", "--height", "16", "--width", "24"]);
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 25);
    for name in names {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let other = dir.path().join("c");
    ok(&["gen-data", "--out", path(&other), "--size", "12", "--seed", "6", "--height", "16", "--width", "24"]);
    assert_ne!(std::fs::read(a.join("img_00000.ppm")).unwrap(), std::fs::read(other.join("img_00000.ppm")).unwrap());
}

#[test]
fn gen_data_writes_protocol_split_and_valid_labels() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gen-data", "--out", path(dir.path()), "--size", "1464", "--ratio", "1/16", "--height", "8", "--width", "8"]);
    assert!(stdout.contains("(92 labeled)"), "{stdout}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let parsed = segkc::data::SplitManifest::parse(&manifest).unwrap();
    assert_eq!(parsed.labeled_ids.len(), 92);
    for id in [0, 731, 1463] {
        let bytes = std::fs::read(dir.path().join(format!("lbl_{id:05}.pgm"))).unwrap();
        let labels = segkc::data::pnm::decode_pgm(&bytes).unwrap();
        assert!(labels.data().iter().all(|&v| v < 4 || v == 255));
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = train(dir.path(), &["--epochs", "0"]);
    assert!(stdout.contains("final junior mIoU"));
    let table = ok(&["eval", "--ckpt", path(&dir.path().join("ckpt.final"))]);
    assert!(miou(&table) < 0.4, "{table}");
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn zero_kd_weight_gives_zero_kd_column() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--epochs", "2", "--lambda3", "0"]);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let kd = header.iter().position(|h| *h == "kd").unwrap();
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row.split(',').nth(kd).unwrap().parse::<f64>().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn overfits_a_handful_of_images() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train", "--out", path(dir.path()), "--lambda2", "0", "--lambda3", "0", "--epochs", "1",
        "--set", "image_height=32", "--set", "image_width=32", "--set", "dataset_size=4", "--set", "ratio=\"full\"",
        "--set", "batch_size=4", "--set", "iters_per_epoch=300", "--set", "val_size=4", "--set", "save_preds=0",
        "--set", "hflip=false", "--set", "color_jitter=0", "--set", "illumination=0",
    ];
    ok(&args);
    let ckpt = dir.path().join("ckpt.final");
    let table = ok(&["eval", "--ckpt", path(&ckpt), "--train-split", "--images", "4"]);
    assert!(miou(&table) > 0.95, "{table}");
    let senior = ok(&["eval", "--ckpt", path(&ckpt), "--train-split", "--images", "4", "--branch", "senior"]);
    assert!(miou(&senior) > 0.5, "{senior}");
}

#[test]
fn oversized_window_matches_whole_image() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--epochs", "1"]);
    let ckpt = dir.path().join("ckpt.final");
    let out = dir.path().join("iou.txt");
    let whole = ok(&["eval", "--ckpt", path(&ckpt), "--no-sliding", "--out", path(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), whole);
    let window = ok(&["eval", "--ckpt", path(&ckpt), "--window", "64"]);
    assert_eq!(whole, window);
    let tiled = ok(&["eval", "--ckpt", path(&ckpt), "--window", "8", "--stride", "4"]);
    assert_eq!(tiled.lines().count(), whole.lines().count());
}

#[test]
fn presets_write_a_summary_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = train(dir.path(), &["--preset", "table5", "--epochs", "1"]);
    for v in ["sup", "sup+con", "sup+con+kd"] {
        assert!(stdout.contains(&format!("{v}: final junior mIoU")), "{stdout}");
        assert!(dir.path().join(v).join("metrics.csv").exists());
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(segkc(&["train", "--out", out, "--bogus"]).status.code(), Some(2));
    assert_eq!(segkc(&["train", "--out", out, "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(segkc(&["train", "--out", out, "--set", "ratio=half"]).status.code(), Some(2));
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(segkc(&["eval", "--ckpt", path(&missing)]).status.code(), Some(3));

    let garbage = dir.path().join("bad");
    std::fs::create_dir(&garbage).unwrap();
    train(&garbage, &["--epochs", "0"]);
    std::fs::write(garbage.join("ckpt.final"), b"not a checkpoint").unwrap();
    assert_eq!(segkc(&["eval", "--ckpt", path(&garbage.join("ckpt.final"))]).status.code(), Some(3));

    let mut args = vec!["train", "--out", out, "--epochs", "1", "--set", "base_lr=1e300", "--set", "decoder_lr_multiplier=1e8"];
    args.extend_from_slice(SMALL);
    let diverged = segkc(&args);
    assert_eq!(diverged.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverged.stderr));
}

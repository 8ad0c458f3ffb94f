use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, Luma};

mod common;

const BIN: &str = env!("CARGO_BIN_EXE_subband");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SUBBAND_DATA").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data plus one short training run.
fn trained() -> (tempfile::TempDir, String, String) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    common::synthetic_mnist(&data, 128, 48);
    let out = tmp.path().join("run");
    let o = run(&[
        "train", "--config", "srcnn-mnist-small", "--epochs", "1", "--data", s(&data), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (tmp, s(&data).to_string(), s(&out).to_string())
}

#[test]
fn train_without_data_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", "srcnn-mnist-small", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&["train", "--config", "srcnn-mnist-small", "--data", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn unknown_config_is_a_usage_error() {
    let o = run(&["count", "--config", "no-such-model"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("srcnn-mnist"));
}

#[test]
fn malformed_config_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "name = \"x\"\nfamily = \"srcnn\"\n").unwrap();
    assert_eq!(code(&run(&["count", "--config", s(&p)])), 2);
}

#[test]
fn missing_checkpoint_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--ckpt", s(&tmp.path().join("nope.ckpt")), "--data", s(tmp.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn count_reports_ratio_and_csv() {
    let o = run(&["count", "--config", "srcnn-cifar10", "--baseline", "bcnn-cifar10"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let ratio: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mac_ratio srcnn-cifar10 / bcnn-cifar10 = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ratio < 0.3);

    let o = run(&["count", "--config", "bcnn-mnist", "--format", "csv"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,out_h,out_w,out_c,macs,params"));
    assert!(text.contains("\nstack0.conv0,32,32,64,589824,640\n"));
    assert!(text.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn count_reference_lists_assumptions() {
    let o = run(&["count", "--config", "srcnn-mnist", "--reference"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("SRCNN (1L)"));
    assert!(text.contains("169.5 M"));
    assert!(text.contains("ImageNet SRCNN (1L) estimate"));
}

#[test]
fn decompose_writes_every_subband() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("flat.png");
    GrayImage::from_pixel(32, 32, Luma([90])).save(&img).unwrap();
    let out = tmp.path().join("bands");
    let o = run(&["decompose", "--input", s(&img), "--levels", "2", "--out", s(&out), "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..16 {
        assert!(out.join(format!("subband_{k:02}.tns")).is_file());
        let preview = image::open(out.join(format!("subband_{k:02}.png"))).unwrap().to_luma8();
        assert_eq!(preview.dimensions(), (8, 8));
        if k > 0 {
            assert!(preview.pixels().all(|p| p.0[0] == 128), "subband {k} not mid-gray");
        }
    }
    let csv = fs::read_to_string(out.join("sparsity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    let err: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_reconstruction_error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-12);
}

#[test]
fn decompose_rejects_indivisible_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("odd.png");
    GrayImage::from_pixel(30, 30, Luma([10])).save(&img).unwrap();
    let out = tmp.path().join("bands");
    let o = run(&["decompose", "--input", s(&img), "--levels", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn train_outputs_and_eval_agree() {
    let (_tmp, data, out) = trained();
    let out = Path::new(&out);
    for f in ["metrics.csv", "last.ckpt", "best.ckpt", "config.toml", "preprocess.json", "manifest.jsonl"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let manifest: serde_json::Value =
        serde_json::from_str(fs::read_to_string(out.join("manifest.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 0);

    let ckpt = out.join("last.ckpt");
    let o = run(&["eval", "--ckpt", s(&ckpt), "--data", &data]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let field = |k: &str| text.lines().find_map(|l| l.strip_prefix(k)).unwrap().trim().to_string();
    assert_eq!(field("top1 "), row[5]);
    assert_eq!(field("top5 "), row[6]);
    assert_eq!(field("loss "), row[4]);
}

#[test]
fn eval_rejects_wrong_class_count() {
    let (tmp, _data, out) = trained();
    let cifar = tmp.path().join("cifar");
    let o = run(&["eval", "--ckpt", &format!("{out}/last.ckpt"), "--dataset", "cifar100", "--data", s(&cifar)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn quant_eval_grid_has_fifteen_rows() {
    let (tmp, data, out) = trained();
    let csv = tmp.path().join("q.csv");
    let o = run(&[
        "quant-eval",
        "--ckpt",
        &format!("{out}/last.ckpt"),
        "--data",
        &data,
        "--input-bits",
        "1,2,4,6,8",
        "--weight-format",
        "f8,f16,f32",
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,dataset,input_bits,weight_format,top1,top5");
    assert_eq!(lines.len(), 16);
    assert!(lines.iter().any(|l| l.starts_with("srcnn-mnist-small,mnist,8,f32,")));

    let o = run(&["quant-eval", "--ckpt", &format!("{out}/last.ckpt"), "--data", &data, "--input-bits", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn shipped_names_load_and_threads_flag_is_global() {
    let o = run(&["--threads", "1", "count", "--config", "tcnn-mnist-small"]);
    assert_eq!(code(&o), 0);
    let o = run(&["count", "--threads", "1", "--config", "tcnn-mnist-small"]);
    assert_eq!(code(&o), 0);
}

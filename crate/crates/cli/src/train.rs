use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use subband_core::data::{self, Normalization};
use subband_core::train::{evaluate, Trainer};

use crate::util::{self, usage, Preprocess};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_top1,test_loss,test_top1,test_top5";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file, or the name of a shipped config (e.g. srcnn-mnist).
    #[arg(long)]
    config: String,
    /// Data root or dataset directory.
    #[arg(long, env = util::DATA_ENV)]
    data: Option<PathBuf>,
    /// Overrides the config's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Train on the first N training samples only.
    #[arg(long)]
    limit_train: Option<usize>,
    /// Evaluate on the first N test samples only.
    #[arg(long)]
    limit_test: Option<usize>,
    /// Batch size for evaluation passes.
    #[arg(long, default_value_t = 256)]
    eval_batch: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a str,
    model: &'a str,
    seed: u64,
    dataset: &'a str,
    data_dir: String,
    epochs: usize,
    out: String,
    threads: usize,
    limit_train: Option<usize>,
    limit_test: Option<usize>,
    version: &'static str,
    source_revision: String,
    started_unix: u64,
    wall_clock_seconds: f64,
    status: String,
    final_metrics: Option<FinalMetrics>,
}

#[derive(Serialize, Clone, Copy)]
struct FinalMetrics {
    epochs_completed: usize,
    train_loss: f64,
    test_loss: f64,
    test_top1: f64,
    test_top5: f64,
    best_epoch: usize,
    best_test_top1: f64,
}

fn source_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn run(args: TrainArgs, threads: usize) -> Result<()> {
    let cfg = util::load_config(&args.config)?;
    let kind = cfg
        .dataset
        .ok_or_else(|| usage(format!("config {} does not name a dataset", cfg.name)))?;
    let dir = util::data_dir(args.data.as_deref(), kind)?;
    let epochs = args.epochs.unwrap_or(cfg.training.epochs);
    if epochs == 0 {
        return Err(usage("--epochs must be >= 1"));
    }
    if args.eval_batch == 0 {
        return Err(usage("--eval-batch must be >= 1"));
    }

    let pair = data::load::<f32>(kind, &dir).with_context(|| format!("loading {}", dir.display()))?;
    let train = match args.limit_train {
        Some(n) => pair.train.truncate(n)?,
        None => pair.train,
    };
    let test = match args.limit_test {
        Some(n) => pair.test.truncate(n)?,
        None => pair.test,
    };
    let norm = Normalization::fit(&train.images);
    let train_x = norm.apply(&train.images)?;
    let test_x = norm.apply(&test.images)?;
    drop(train.images);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    Preprocess {
        dataset: util::dataset_name(kind).into(),
        mean: norm.mean.clone(),
        std: norm.std.clone(),
        limit_train: args.limit_train,
        limit_test: args.limit_test,
    }
    .save(&args.out)?;
    fs::write(args.out.join("config.toml"), cfg.to_toml_string()?)?;

    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let outcome = train_loop(&args, &cfg, epochs, &train_x, &train.labels, &test_x, &test.labels);

    let (status, final_metrics) = match &outcome {
        Ok(m) => ("ok".to_string(), Some(*m)),
        Err(e) => (format!("failed: {e:#}"), None),
    };
    let manifest = Manifest {
        config: &args.config,
        model: &cfg.name,
        seed: args.seed,
        dataset: util::dataset_name(kind),
        data_dir: dir.display().to_string(),
        epochs,
        out: args.out.display().to_string(),
        threads,
        limit_train: args.limit_train,
        limit_test: args.limit_test,
        version: env!("CARGO_PKG_VERSION"),
        source_revision: source_revision(),
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        status,
        final_metrics,
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(args.out.join("manifest.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(&manifest)?)?;
    outcome.map(|_| ())
}

fn train_loop(
    args: &TrainArgs,
    cfg: &subband_core::ArchitectureConfig,
    epochs: usize,
    train_x: &subband_core::Tensor4<f32>,
    train_y: &[usize],
    test_x: &subband_core::Tensor4<f32>,
    test_y: &[usize],
) -> Result<FinalMetrics> {
    let out: &Path = &args.out;
    let mut metrics = fs::File::create(out.join("metrics.csv"))?;
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut trainer = Trainer::<f32>::new(cfg, args.seed)?;
    let mut best: Option<(usize, f64)> = None;
    let mut last = None;
    println!(
        "training {} on {} train / {} test samples for {epochs} epochs",
        cfg.name,
        train_y.len(),
        test_y.len()
    );
    for _ in 0..epochs {
        let t0 = Instant::now();
        let stats = trainer
            .run_epoch(train_x, train_y)
            .with_context(|| format!("epoch {}", trainer.epoch + 1))?;
        let ev = evaluate(&trainer.model, test_x, test_y, args.eval_batch)?;
        writeln!(
            metrics,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            stats.epoch, stats.lr, stats.loss, stats.accuracy, ev.loss, ev.top1, ev.top5
        )?;
        metrics.flush()?;
        let ckpt = trainer.checkpoint();
        ckpt.save(out.join("last.ckpt"))?;
        if best.is_none_or(|(_, acc)| ev.top1 > acc) {
            best = Some((stats.epoch, ev.top1));
            ckpt.save(out.join("best.ckpt"))?;
        }
        println!(
            "epoch {:>3}  lr {:.5}  train_loss {:.4}  train_top1 {:.4}  test_top1 {:.4}  test_top5 {:.4}  ({:.1}s)",
            stats.epoch,
            stats.lr,
            stats.loss,
            stats.accuracy,
            ev.top1,
            ev.top5,
            t0.elapsed().as_secs_f64()
        );
        last = Some((stats, ev));
    }
    let (stats, ev) = last.expect("at least one epoch");
    let (best_epoch, best_top1) = best.expect("at least one epoch");
    Ok(FinalMetrics {
        epochs_completed: stats.epoch,
        train_loss: stats.loss,
        test_loss: ev.loss,
        test_top1: ev.top1,
        test_top5: ev.top5,
        best_epoch,
        best_test_top1: best_top1,
    })
}

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use subband_core::data::{self, Dataset, Normalization};
use subband_core::model::{Checkpoint, DatasetKind, Model};
use subband_core::quant::{quant_eval, WeightFormat};
use subband_core::train::evaluate;

use crate::util::{self, usage, Preprocess};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Data root or dataset directory.
    #[arg(long, env = util::DATA_ENV)]
    data: Option<PathBuf>,
    /// Dataset to evaluate on; defaults to the one the model was configured for.
    #[arg(long, value_parser = util::parse_dataset)]
    dataset: Option<DatasetKind>,
    /// Evaluate on the first N test samples; defaults to the training run's limit.
    #[arg(long)]
    limit_test: Option<usize>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args, Debug)]
pub struct QuantEvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = util::DATA_ENV)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = util::parse_dataset)]
    dataset: Option<DatasetKind>,
    /// Input bit depths to sweep (comma-separated); omit for unquantized input.
    #[arg(long, value_delimiter = ',')]
    input_bits: Vec<u32>,
    /// Weight formats to sweep: f8, f16, f32 (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "f32")]
    weight_format: Vec<WeightFormat>,
    #[arg(long)]
    limit_test: Option<usize>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    model: Model<f32>,
    kind: DatasetKind,
    test: Dataset<f32>,
    norm: Normalization,
}

fn load(
    ckpt_path: &std::path::Path,
    data: Option<&std::path::Path>,
    dataset: Option<DatasetKind>,
    limit_test: Option<usize>,
) -> Result<Loaded> {
    if !ckpt_path.is_file() {
        return Err(anyhow::Error::new(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found", ckpt_path.display()),
        )));
    }
    let peek = Checkpoint::<f32>::load(ckpt_path).with_context(|| format!("reading {}", ckpt_path.display()))?;
    let kind = dataset
        .or(peek.config.dataset)
        .ok_or_else(|| usage("the checkpoint does not name a dataset; pass --dataset"))?;
    let ckpt = Checkpoint::<f32>::load_for_classes(ckpt_path, kind.classes())?;
    let model = ckpt.model()?;
    let [h, w, c] = model.config().input_shape;
    if [h, w, c] != kind.input_shape() {
        return Err(usage(format!(
            "model expects {h}x{w}x{c} inputs, {} provides {:?}",
            util::dataset_name(kind),
            kind.input_shape()
        )));
    }
    let dir = util::data_dir(data, kind)?;
    let pre = Preprocess::for_checkpoint(ckpt_path)?.filter(|p| p.dataset == util::dataset_name(kind));
    let pair = data::load::<f32>(kind, &dir).with_context(|| format!("loading {}", dir.display()))?;
    let limit = limit_test.or(pre.as_ref().and_then(|p| p.limit_test));
    let test = match limit {
        Some(n) => pair.test.truncate(n)?,
        None => pair.test,
    };
    let norm = match &pre {
        Some(p) => p.normalization(),
        None => Normalization::fit(&pair.train.images),
    };
    Ok(Loaded { model, kind, test, norm })
}

pub fn run(args: EvalArgs) -> Result<()> {
    if args.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    let l = load(&args.ckpt, args.data.as_deref(), args.dataset, args.limit_test)?;
    let x = l.norm.apply(&l.test.images)?;
    let r = evaluate(&l.model, &x, &l.test.labels, args.batch_size)?;
    println!("model {}", l.model.config().name);
    println!("dataset {} test {}", util::dataset_name(l.kind), r.n);
    println!("top1 {:.6}", r.top1);
    println!("top5 {:.6}", r.top5);
    println!("top5_minus_top1 {:.4}", r.top5_gap());
    println!("loss {:.6}", r.loss);
    Ok(())
}

pub fn run_quant(args: QuantEvalArgs) -> Result<()> {
    if args.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    if let Some(b) = args.input_bits.iter().find(|&&b| b == 0 || b > 24) {
        return Err(usage(format!("--input-bits values must be in 1..=24, got {b}")));
    }
    let l = load(&args.ckpt, args.data.as_deref(), args.dataset, args.limit_test)?;
    let bits: Vec<Option<u32>> = if args.input_bits.is_empty() {
        vec![None]
    } else {
        args.input_bits.iter().copied().map(Some).collect()
    };
    let mut csv = String::from("model,dataset,input_bits,weight_format,top1,top5\n");
    println!("{:<24} {:>10} {:>8} {:>9} {:>9}", "model", "input_bits", "weights", "top1", "top5");
    for &b in &bits {
        for &f in &args.weight_format {
            let r = quant_eval(&l.model, &l.test, &l.norm, b, Some(f), args.batch_size)?;
            let b_label = b.map_or("none".to_string(), |b| b.to_string());
            println!(
                "{:<24} {:>10} {:>8} {:>9.4} {:>9.4}",
                l.model.config().name,
                b_label,
                f,
                100.0 * r.top1,
                100.0 * r.top5
            );
            csv.push_str(&format!(
                "{},{},{b_label},{f},{:.6},{:.6}\n",
                l.model.config().name,
                util::dataset_name(l.kind),
                r.top1,
                r.top5
            ));
        }
    }
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

use anyhow::Result;
use clap::{Args, ValueEnum};
use subband_core::cost::{count_model, imagenet_srcnn_best_effort, reference_row, reference_table};

use crate::util;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    /// Config file or shipped config name.
    #[arg(long)]
    config: String,
    /// Second config to compare MACs and parameters against.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Also print the published comparison table and the ImageNet SRCNN estimate.
    #[arg(long)]
    reference: bool,
}

pub fn run(args: CountArgs) -> Result<()> {
    let cfg = util::load_config(&args.config)?;
    let report = count_model(&cfg)?;
    match args.format {
        Format::Table => println!("{report}"),
        Format::Csv => print!("{}", report.to_csv()),
    }
    if let Some(b) = &args.baseline {
        let base = count_model(&util::load_config(b)?)?;
        if let Format::Table = args.format {
            println!();
            println!("{base}");
            println!();
        }
        println!(
            "mac_ratio {} / {} = {:.4}",
            report.model,
            base.model,
            report.total_macs as f64 / base.total_macs as f64
        );
        println!(
            "param_ratio {} / {} = {:.4}",
            report.model,
            base.model,
            report.total_params as f64 / base.total_params as f64
        );
    }
    if args.reference {
        println!();
        println!(
            "{:<14} {:>9} {:>10} {:>8} {:>6} {:>6} {:>6}",
            "model", "MACs", "params(M)", "MByte", "top1", "top5", "gap"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v}"));
        for r in reference_table() {
            println!(
                "{:<14} {:>9} {:>10} {:>8} {:>6} {:>6} {:>6}",
                r.model,
                r.macs_label,
                r.params_m,
                r.params_mbyte,
                opt(r.top1),
                opt(r.top5),
                opt(r.delta_top5_top1)
            );
        }
        let be = imagenet_srcnn_best_effort()?;
        let target = reference_row("SRCNN (1L)").expect("reference row");
        let (dm, dp) = be.relative_error(target);
        println!();
        println!("ImageNet SRCNN (1L) estimate");
        for a in &be.assumptions {
            println!("  - {a}");
        }
        for (label, macs, params) in be.breakdown() {
            println!("  {label:<22} {:>8.2} M MACs {:>8.3} M params", macs as f64 / 1e6, params as f64 / 1e6);
        }
        println!(
            "  total {:.2} M MACs ({:+.1}% vs {}), {:.3} M params ({:+.1}% vs {})",
            be.report.total_macs as f64 / 1e6,
            100.0 * dm,
            target.macs_label,
            be.report.total_params as f64 / 1e6,
            100.0 * dp,
            target.params_m
        );
    }
    Ok(())
}

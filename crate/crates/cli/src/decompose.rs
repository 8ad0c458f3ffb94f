use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use image::{GrayImage, RgbImage};
use subband_core::data;
use subband_core::model::DatasetKind;
use subband_core::wavelet::subband_sparsity;
use subband_core::{packet_decompose, packet_reconstruct, FilterPair, Tensor4};

use crate::util::{self, usage};

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// Image (PNG/PNM) or TNS4 tensor file.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    input: Option<PathBuf>,
    /// Take the input from a dataset's test split instead.
    #[arg(long, value_parser = util::parse_dataset)]
    dataset: Option<DatasetKind>,
    #[arg(long, env = util::DATA_ENV)]
    data: Option<PathBuf>,
    /// Test-split sample index used with --dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
    /// Magnitude below which a coefficient counts as zero.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Reconstruct and report the largest absolute error.
    #[arg(long)]
    check: bool,
}

fn load_input(args: &DecomposeArgs) -> Result<Tensor4<f64>> {
    if let Some(kind) = args.dataset {
        let dir = util::data_dir(args.data.as_deref(), kind)?;
        let pair = data::load::<f64>(kind, &dir)?;
        if args.index >= pair.test.len() {
            return Err(usage(format!("--index {} beyond {} test samples", args.index, pair.test.len())));
        }
        return Ok(pair.test.images.select(&[args.index])?);
    }
    let path = args.input.as_deref().expect("clap requires --input or --dataset");
    let is_tensor = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tns") || e.eq_ignore_ascii_case("tns4"));
    if is_tensor {
        let t = Tensor4::<f64>::load(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(t);
    }
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let gray = img.color().channel_count() <= 2;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        let px = img.to_luma8();
        let data = px.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Tensor4::from_vec([1, h, w, 1], data)?)
    } else {
        let px = img.to_rgb8();
        let data = px.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Tensor4::from_vec([1, h, w, 3], data)?)
    }
}

/// Scales a subband to bytes. The approximation band (`centered == false`)
/// spans its own min..max; detail bands map 0 to 128 and ±max|v| to the
/// ends, so a zero band is uniformly mid-gray.
fn preview_bytes(values: &[f64], centered: bool) -> Vec<u8> {
    if centered {
        let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        values
            .iter()
            .map(|&v| if m == 0.0 { 128 } else { (128.0 + 127.0 * v / m).round() as u8 })
            .collect()
    } else {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        values
            .iter()
            .map(|&v| if hi > lo { (255.0 * (v - lo) / (hi - lo)).round() as u8 } else { 128 })
            .collect()
    }
}

fn write_preview(path: &Path, band: &Tensor4<f64>, centered: bool) -> Result<bool> {
    let s = band.shape();
    let bytes = preview_bytes(band.sample(0), centered);
    let (w, h) = (s.w as u32, s.h as u32);
    match s.c {
        1 => GrayImage::from_raw(w, h, bytes).expect("sized buffer").save(path)?,
        3 => RgbImage::from_raw(w, h, bytes).expect("sized buffer").save(path)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn run(args: DecomposeArgs) -> Result<()> {
    let x = load_input(&args)?;
    if x.shape().n != 1 {
        return Err(usage(format!("expected a single image, got {}", x.shape())));
    }
    if !(args.eps > 0.0) {
        return Err(usage("--eps must be positive"));
    }
    let filters = FilterPair::haar();
    let bands = packet_decompose(&x, args.levels, &filters)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let sparsity = subband_sparsity(&bands, args.eps)?;
    let mut csv = String::from("subband,height,width,channels,energy,sparsity\n");
    let width = (bands.len() - 1).to_string().len().max(2);
    for (k, band) in bands.subbands().iter().enumerate() {
        let stem = format!("subband_{k:0width$}");
        band.save(args.out.join(format!("{stem}.tns")))?;
        write_preview(&args.out.join(format!("{stem}.png")), band, k != 0)?;
        let s = band.shape();
        csv.push_str(&format!(
            "{k},{},{},{},{:.6e},{:.6}\n",
            s.h,
            s.w,
            s.c,
            band.sum_sq(),
            sparsity[k]
        ));
    }
    fs::write(args.out.join("sparsity.csv"), &csv)?;
    let s = bands.subband_shape();
    println!(
        "{} subbands of {}x{}x{} written to {}",
        bands.len(),
        s.h,
        s.w,
        s.c,
        args.out.display()
    );
    let mean = sparsity.iter().sum::<f64>() / sparsity.len() as f64;
    println!("mean sparsity (|v| < {}) {:.4}", args.eps, mean);
    println!(
        "energy image {:.6e} subbands {:.6e}",
        x.sum_sq(),
        bands.energy()
    );
    if args.check {
        let back = packet_reconstruct(&bands, &filters)?;
        println!("max_abs_reconstruction_error {:.3e}", back.max_abs_diff(&x)?);
    }
    Ok(())
}

//! Analytic MAC and parameter counts.
//!
//! Conventions: one MAC is one multiply-accumulate. A conv layer costs
//! `h_out·w_out·c_out·kh·kw·c_in` MACs and holds `kh·kw·c_in·c_out + c_out`
//! parameters; a dense layer costs `d_in·d_out` MACs and holds
//! `d_in·d_out + d_out` parameters. Bias adds, pooling, activations,
//! dropout, softmax and the wavelet front end count as zero.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::PoolSpec;
use crate::model::{ArchitectureConfig, Family, LayerSpec};
use crate::wavelet::subband_count;

/// A layer as seen by the counter. Convs are stride 1 and same-padded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostLayer {
    Conv { kernel: (usize, usize), c_in: usize, c_out: usize },
    Fc { d_in: usize, d_out: usize },
    Pool(PoolSpec),
    /// Average pooling to a fixed `(h, w)`.
    AdaptivePool { h: usize, w: usize },
    /// One level of the wavelet packet front end applied per channel; the
    /// output keeps the subbands side by side in channels.
    Dwt { levels: usize },
    Activation,
    Dropout,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCount {
    pub output: [usize; 3],
    pub macs: u64,
    pub params: u64,
}

/// Counts one layer applied to an `(h, w, c)` input.
pub fn count_layer(layer: &CostLayer, input: [usize; 3]) -> Result<LayerCount> {
    let [h, w, c] = input;
    let free = |output| LayerCount { output, macs: 0, params: 0 };
    Ok(match *layer {
        CostLayer::Conv { kernel: (kh, kw), c_in, c_out } => {
            if c_in != c {
                return Err(Error::config(format!("conv expects {c_in} channels, input has {c}")));
            }
            let k = (kh * kw * c_in) as u64;
            LayerCount {
                output: [h, w, c_out],
                macs: (h * w * c_out) as u64 * k,
                params: k * c_out as u64 + c_out as u64,
            }
        }
        CostLayer::Fc { d_in, d_out } => {
            if d_in != h * w * c {
                return Err(Error::config(format!(
                    "dense layer expects {d_in} inputs, receives {}",
                    h * w * c
                )));
            }
            LayerCount {
                output: [1, 1, d_out],
                macs: (d_in * d_out) as u64,
                params: (d_in * d_out + d_out) as u64,
            }
        }
        CostLayer::Pool(p) => {
            let (oh, ow) = p.output_extent(h, w).map_err(|e| Error::config(e.to_string()))?;
            free([oh, ow, c])
        }
        CostLayer::AdaptivePool { h: oh, w: ow } => {
            if oh == 0 || ow == 0 || oh > h || ow > w {
                return Err(Error::config(format!("cannot pool {h}x{w} to {oh}x{ow}")));
            }
            free([oh, ow, c])
        }
        CostLayer::Dwt { levels } => {
            let block = 1usize << levels;
            if h % block != 0 || w % block != 0 {
                return Err(Error::config(format!("{h}x{w} is not divisible by 2^{levels}")));
            }
            free([h / block, w / block, c * subband_count(levels)])
        }
        CostLayer::Activation | CostLayer::Dropout | CostLayer::Softmax => free(input),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub output: [usize; 3],
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub model: String,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl CostReport {
    fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            layers: Vec::new(),
            total_macs: 0,
            total_params: 0,
        }
    }

    fn push(&mut self, name: impl Into<String>, count: LayerCount) {
        self.total_macs += count.macs;
        self.total_params += count.params;
        self.layers.push(LayerCost {
            name: name.into(),
            output: count.output,
            macs: count.macs,
            params: count.params,
        });
    }

    /// Bytes needed to store every parameter at `bytes_per_param`.
    pub fn param_bytes(&self, bytes_per_param: usize) -> u64 {
        self.total_params * bytes_per_param as u64
    }

    /// Sums over layers whose name starts with `prefix`.
    pub fn sum_where(&self, prefix: &str) -> (u64, u64) {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .fold((0, 0), |(m, p), l| (m + l.macs, p + l.params))
    }

    pub fn conv_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.name.contains("conv")).map(|l| l.macs).sum()
    }

    pub fn fc_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.name.starts_with("fc")).map(|l| l.macs).sum()
    }

    /// Comma-separated rows with a header and a trailing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,out_h,out_w,out_c,macs,params\n");
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.name, l.output[0], l.output[1], l.output[2], l.macs, l.params
            ));
        }
        s.push_str(&format!("total,,,,{},{}\n", self.total_macs, self.total_params));
        s
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.model)?;
        writeln!(f, "{:<20} {:>16} {:>16} {:>14}", "layer", "output", "MACs", "params")?;
        for l in &self.layers {
            let shape = format!("{}x{}x{}", l.output[0], l.output[1], l.output[2]);
            writeln!(f, "{:<20} {:>16} {:>16} {:>14}", l.name, shape, l.macs, l.params)?;
        }
        writeln!(
            f,
            "{:<20} {:>16} {:>16} {:>14}",
            "total",
            "",
            self.total_macs,
            self.total_params
        )?;
        write!(
            f,
            "{:.2} M MACs, {:.3} M params, {:.2} MB at f32",
            self.total_macs as f64 / 1e6,
            self.total_params as f64 / 1e6,
            self.param_bytes(4) as f64 / (1 << 20) as f64
        )
    }
}

/// Walks a config with shape propagation. SRCNN stacks are listed one after
/// another as `stack{k}.*`.
pub fn count_model(config: &ArchitectureConfig) -> Result<CostReport> {
    let topo = config.topology()?;
    let mut report = CostReport::new(&config.name);
    let mut shape = config.input_shape;
    if config.dwt_levels > 0 {
        let c = count_layer(&CostLayer::Dwt { levels: config.dwt_levels }, shape)?;
        report.push("dwt", c);
        shape = c.output;
    }
    let stack_input = topo.stack_input;
    if config.family != Family::Srcnn {
        debug_assert_eq!(shape, stack_input);
    }
    let mut stack_out = stack_input;
    for k in 0..topo.stacks {
        let mut cur = stack_input;
        let (mut conv, mut pool) = (0, 0);
        for spec in &config.subband_stack {
            match *spec {
                LayerSpec::Conv { c_in, c_out, kernel } => {
                    let c = count_layer(&CostLayer::Conv { kernel: (kernel, kernel), c_in, c_out }, cur)?;
                    report.push(format!("stack{k}.conv{conv}"), c);
                    report.push(format!("stack{k}.relu{conv}"), count_layer(&CostLayer::Activation, c.output)?);
                    cur = c.output;
                    conv += 1;
                }
                LayerSpec::Pool { .. } => {
                    let p = spec.pool_spec().expect("pool");
                    let c = count_layer(&CostLayer::Pool(p), cur)?;
                    report.push(format!("stack{k}.pool{pool}"), c);
                    cur = c.output;
                    pool += 1;
                }
            }
        }
        stack_out = cur;
    }
    let flat = [1, 1, topo.stacks * stack_out[0] * stack_out[1] * stack_out[2]];
    report.push(
        "concat",
        LayerCount {
            output: flat,
            macs: 0,
            params: 0,
        },
    );
    let mut cur = flat;
    let last = config.fc_stack.len() - 1;
    for (j, fc) in config.fc_stack.iter().enumerate() {
        let c = count_layer(&CostLayer::Fc { d_in: fc.d_in, d_out: fc.d_out }, cur)?;
        report.push(format!("fc{j}"), c);
        cur = c.output;
        if j < last {
            report.push(format!("fc{j}.relu"), count_layer(&CostLayer::Activation, cur)?);
            if fc.dropout > 0.0 {
                report.push(format!("fc{j}.dropout"), count_layer(&CostLayer::Dropout, cur)?);
            }
        }
    }
    report.push("softmax", count_layer(&CostLayer::Softmax, cur)?);
    Ok(report)
}

/// One published comparison row, kept verbatim for report rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub macs_label: &'static str,
    pub macs: f64,
    pub params_m: f64,
    pub params_mbyte: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub delta_top5_top1: Option<f64>,
}

/// Published ImageNet-2012 costs and accuracies for the comparison models.
pub fn reference_table() -> &'static [ReferenceRow] {
    const fn row(
        model: &'static str,
        macs_label: &'static str,
        macs: f64,
        params_m: f64,
        params_mbyte: f64,
        top1: Option<f64>,
        top5: Option<f64>,
        delta_top5_top1: Option<f64>,
    ) -> ReferenceRow {
        ReferenceRow {
            model,
            macs_label,
            macs,
            params_m,
            params_mbyte,
            top1,
            top5,
            delta_top5_top1,
        }
    }
    const ROWS: &[ReferenceRow] = &[
        row("MobileNet V1", "569 M", 569e6, 4.24, 2.0, Some(70.9), Some(89.9), Some(19.0)),
        row("MobileNet V2", "300 M", 300e6, 3.47, 1.7, Some(71.8), Some(91.0), Some(19.2)),
        row("Google Net", "741 M", 741e6, 6.99, 3.3, None, Some(92.1), None),
        row("AlexNet", "724 M", 724e6, 60.95, 29.1, Some(62.5), Some(83.0), Some(20.5)),
        row("SqueezeNet", "451 M", 451e6, 1.24, 0.6, Some(57.5), Some(80.3), Some(22.8)),
        row("ResNet-50", "3.9 B", 3.9e9, 25.6, 12.2, Some(75.2), Some(93.0), Some(17.8)),
        row("VGG", "15.5 B", 15.5e9, 138.0, 65.8, Some(70.5), Some(91.2), Some(20.7)),
        row("Inception-V1", "1.43 B", 1.43e9, 7.0, 3.3, Some(69.8), Some(89.3), Some(19.5)),
        row("SRCNN (1L)", "169.5 M", 169.5e6, 42.05, 20.1, Some(65.6), Some(82.17), Some(16.57)),
        row("SRCNN (2L)", "46.34 M", 46.34e6, 13.64, 6.5, None, None, None),
    ];
    ROWS
}

pub fn reference_row(model: &str) -> Option<&'static ReferenceRow> {
    reference_table().iter().find(|r| r.model == model)
}

/// A count of the 224x224x3 SRCNN column together with the reading of the
/// architecture table it relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct BestEffort {
    pub report: CostReport,
    pub assumptions: Vec<&'static str>,
}

impl BestEffort {
    pub fn relative_error(&self, reference: &ReferenceRow) -> (f64, f64) {
        (
            self.report.total_macs as f64 / reference.macs - 1.0,
            self.report.total_params as f64 / (reference.params_m * 1e6) - 1.0,
        )
    }

    /// MACs and params grouped by stage.
    pub fn breakdown(&self) -> Vec<(&'static str, u64, u64)> {
        let mut out = Vec::new();
        for (label, prefix) in [
            ("subband stacks @112", "s112"),
            ("subband stacks @56", "s56"),
            ("subband stacks @28", "s28"),
            ("merged convs @28", "m28"),
            ("dense head", "fc"),
        ] {
            let (m, p) = self
                .report
                .layers
                .iter()
                .filter(|l| l.name.starts_with(prefix) || l.name.contains(&format!(".{prefix}")))
                .fold((0, 0), |(m, p), l| (m + l.macs, p + l.params));
            out.push((label, m, p));
        }
        out
    }
}

/// Counts the ImageNet SRCNN column of the architecture table.
pub fn imagenet_srcnn_best_effort() -> Result<BestEffort> {
    let assumptions = vec![
        "input 224x224x3, one DWT level: four 112x112x3 subbands, each with its own stack",
        "all convs are 3x3, stride 1, same padding; pools are 2x2 stride 2",
        "stack block 1 at 112x112: 3->16 then four 16->16 convs",
        "stack block 2 at 56x56: 16->32 then four 32->32 convs; rows listed with 16 input channels or 128 outputs are read as 32->32 so channels chain",
        "stack block 3 at 28x28: one 32->32 conv",
        "the single-column 128->128 rows act on the four 32-channel stack outputs concatenated along channels (4x32 = 128) at 28x28",
        "after the last pool the 14x14x128 map is average-pooled to 4x4 (0 MACs) to match the listed 4x4x128 FC-1 input",
        "dense head 2048->4096->4096->1000 with biases; dropout, ReLU, softmax and the DWT cost 0",
        "MACs include the dense layers",
    ];
    let mut r = CostReport::new("srcnn-imagenet-best-effort");
    let dwt = count_layer(&CostLayer::Dwt { levels: 1 }, [224, 224, 3])?;
    r.push("dwt", dwt);
    let conv = |c_in, c_out| CostLayer::Conv { kernel: (3, 3), c_in, c_out };
    let pool = CostLayer::Pool(PoolSpec::square(2));
    let blocks: [(&str, &[(usize, usize)]); 3] = [
        ("s112", &[(3, 16), (16, 16), (16, 16), (16, 16), (16, 16)]),
        ("s56", &[(16, 32), (32, 32), (32, 32), (32, 32), (32, 32)]),
        ("s28", &[(32, 32)]),
    ];
    let mut stack_out = [0; 3];
    for k in 0..4 {
        let mut cur = [112, 112, 3];
        for (b, (tag, layers)) in blocks.iter().enumerate() {
            for (i, &(ci, co)) in layers.iter().enumerate() {
                let c = count_layer(&conv(ci, co), cur)?;
                r.push(format!("stack{k}.{tag}.conv{i}"), c);
                cur = c.output;
            }
            if b < 2 {
                let c = count_layer(&pool, cur)?;
                r.push(format!("stack{k}.{tag}.pool"), c);
                cur = c.output;
            }
        }
        stack_out = cur;
    }
    let mut cur = [stack_out[0], stack_out[1], 4 * stack_out[2]];
    r.push(
        "concat",
        LayerCount {
            output: cur,
            macs: 0,
            params: 0,
        },
    );
    for i in 0..4 {
        let c = count_layer(&conv(128, 128), cur)?;
        r.push(format!("m28.conv{i}"), c);
        cur = c.output;
    }
    let c = count_layer(&pool, cur)?;
    r.push("m28.pool", c);
    let c = count_layer(&CostLayer::AdaptivePool { h: 4, w: 4 }, c.output)?;
    r.push("avgpool", c);
    cur = c.output;
    for (j, (din, dout)) in [(2048, 4096), (4096, 4096), (4096, 1000)].into_iter().enumerate() {
        let c = count_layer(&CostLayer::Fc { d_in: din, d_out: dout }, [1, 1, cur[0] * cur[1] * cur[2]])?;
        r.push(format!("fc{j}"), c);
        cur = c.output;
    }
    Ok(BestEffort {
        report: r,
        assumptions,
    })
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::PoolSpec;
use crate::optim::{LrSchedule, LrStep, SgdConfig, DEFAULT_BATCH_SIZE, DEFAULT_DECAY, DEFAULT_LR, DEFAULT_MOMENTUM, INIT_BIAS, INIT_WEIGHT_STD};
use crate::wavelet::subband_count;

/// The three model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Full-band CNN on the raw image.
    Bcnn,
    /// One CNN over all subbands stacked as channels.
    Tcnn,
    /// One independent CNN per subband, features concatenated before the
    /// dense head.
    Srcnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
        }
    }
}

/// One entry of a per-subband stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    /// Same-padded stride-1 convolution followed by a leaky ReLU.
    Conv {
        c_in: usize,
        c_out: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
    /// Max pooling.
    Pool {
        #[serde(default = "default_pool")]
        window: usize,
        #[serde(default = "default_pool")]
        stride: usize,
    },
}

impl LayerSpec {
    pub fn pool_spec(&self) -> Option<PoolSpec> {
        match *self {
            LayerSpec::Pool { window, stride } => Some(PoolSpec {
                window: (window, window),
                stride: (stride, stride),
            }),
            LayerSpec::Conv { .. } => None,
        }
    }
}

fn default_kernel() -> usize {
    3
}

fn default_pool() -> usize {
    2
}

/// A dense layer; hidden layers apply the leaky ReLU, then dropout at `dropout`
/// rate when training. The last entry produces logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcSpec {
    pub d_in: usize,
    pub d_out: usize,
    #[serde(default)]
    pub dropout: f64,
}

/// How weight standard deviations are chosen at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Every weight drawn with `init_std`.
    #[default]
    Fixed,
    /// `sqrt(2 / fan_in)` per tensor.
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Multiplicative step decay; empty means a constant rate.
    #[serde(default)]
    pub schedule: Vec<LrStep>,
    #[serde(default)]
    pub init: WeightInit,
    /// Standard deviation of the Gaussian weight init under [`WeightInit::Fixed`].
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Constant every bias starts at.
    #[serde(default = "default_init_bias")]
    pub init_bias: f64,
}

fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_decay() -> f64 {
    DEFAULT_DECAY
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_init_std() -> f64 {
    INIT_WEIGHT_STD
}
fn default_init_bias() -> f64 {
    INIT_BIAS
}
fn default_epochs() -> usize {
    20
}
fn default_leak() -> f64 {
    0.1
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            decay: DEFAULT_DECAY,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: default_epochs(),
            schedule: Vec::new(),
            init: WeightInit::Fixed,
            init_std: INIT_WEIGHT_STD,
            init_bias: INIT_BIAS,
        }
    }
}

impl TrainingConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            decay: self.decay,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            steps: self.schedule.clone(),
        }
    }
}

/// Declarative description of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub name: String,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetKind>,
    /// Packet decomposition depth `M`; 0 for BCNN.
    #[serde(default)]
    pub dwt_levels: usize,
    /// `(h, w, c)` of one input sample.
    pub input_shape: [usize; 3],
    pub classes: usize,
    #[serde(default = "default_leak")]
    pub leak: f64,
    /// Layers of one stack (SRCNN builds `4^M` copies).
    pub subband_stack: Vec<LayerSpec>,
    pub fc_stack: Vec<FcSpec>,
    #[serde(default)]
    pub training: TrainingConfig,
}

/// Shapes implied by a validated config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub stacks: usize,
    /// `(h, w, c)` entering each stack.
    pub stack_input: [usize; 3],
    /// `(h, w, c)` after each stack layer.
    pub layer_outputs: Vec<[usize; 3]>,
    pub concat_len: usize,
}

impl ArchitectureConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.topology()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Number of subbands `K = 4^M` the front end produces.
    pub fn subbands(&self) -> usize {
        subband_count(self.dwt_levels)
    }

    pub fn conv_layers(&self) -> usize {
        self.subband_stack
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Checks every structural invariant and derives the layer shapes.
    pub fn topology(&self) -> Result<Topology> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::config("input_shape dimensions must be >= 1"));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be >= 1"));
        }
        if let Some(ds) = self.dataset {
            if ds.classes() != self.classes {
                return Err(Error::config(format!(
                    "dataset {ds:?} has {} classes but config declares {}",
                    ds.classes(),
                    self.classes
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(Error::config(format!("leak {} outside [0, 1]", self.leak)));
        }
        match self.family {
            Family::Bcnn if self.dwt_levels != 0 => {
                return Err(Error::config("BCNN must use dwt_levels = 0"));
            }
            Family::Tcnn | Family::Srcnn if self.dwt_levels == 0 => {
                return Err(Error::config(format!("{:?} needs dwt_levels >= 1", self.family)));
            }
            _ => {}
        }
        if self.dwt_levels > 8 {
            return Err(Error::config("dwt_levels above 8 is not supported"));
        }
        let block = 1usize << self.dwt_levels;
        if h % block != 0 || w % block != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} is not divisible by 2^{}",
                self.dwt_levels
            )));
        }
        let k = self.subbands();
        let (sh, sw) = (h / block, w / block);
        let (stacks, stack_c) = match self.family {
            Family::Bcnn => (1, c),
            Family::Tcnn => (1, k * c),
            Family::Srcnn => (k, c),
        };
        let mut cur = [sh, sw, stack_c];
        let mut layer_outputs = Vec::with_capacity(self.subband_stack.len());
        for (i, layer) in self.subband_stack.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { c_in, c_out, kernel } => {
                    if c_in != cur[2] {
                        return Err(Error::config(format!(
                            "subband_stack[{i}]: conv expects {c_in} input channels but receives {}",
                            cur[2]
                        )));
                    }
                    if c_out == 0 || kernel == 0 || kernel % 2 == 0 {
                        return Err(Error::config(format!(
                            "subband_stack[{i}]: need c_out >= 1 and an odd kernel, got {c_out} / {kernel}"
                        )));
                    }
                    cur[2] = c_out;
                }
                LayerSpec::Pool { .. } => {
                    let spec = layer.pool_spec().expect("pool layer");
                    let (oh, ow) = spec
                        .output_extent(cur[0], cur[1])
                        .map_err(|e| Error::config(format!("subband_stack[{i}]: {e}")))?;
                    cur[0] = oh;
                    cur[1] = ow;
                }
            }
            layer_outputs.push(cur);
        }
        let concat_len = stacks * cur[0] * cur[1] * cur[2];
        let first = self
            .fc_stack
            .first()
            .ok_or_else(|| Error::config("fc_stack must contain at least one layer"))?;
        if first.d_in != concat_len {
            return Err(Error::config(format!(
                "fc_stack[0]: d_in is {} but the concatenated features have length {concat_len}",
                first.d_in
            )));
        }
        for (i, pair) in self.fc_stack.windows(2).enumerate() {
            if pair[0].d_out != pair[1].d_in {
                return Err(Error::config(format!(
                    "fc_stack[{}]: d_in {} does not match previous d_out {}",
                    i + 1,
                    pair[1].d_in,
                    pair[0].d_out
                )));
            }
        }
        for (i, fc) in self.fc_stack.iter().enumerate() {
            if fc.d_out == 0 {
                return Err(Error::config(format!("fc_stack[{i}]: d_out must be >= 1")));
            }
            if !(0.0..1.0).contains(&fc.dropout) {
                return Err(Error::config(format!(
                    "fc_stack[{i}]: dropout {} outside [0, 1)",
                    fc.dropout
                )));
            }
        }
        let last = self.fc_stack.last().expect("non-empty");
        if last.d_out != self.classes {
            return Err(Error::config(format!(
                "final dense layer emits {} values for {} classes",
                last.d_out, self.classes
            )));
        }
        if self.training.batch_size == 0 {
            return Err(Error::config("training.batch_size must be >= 1"));
        }
        if !(self.training.init_std >= 0.0 && self.training.init_std.is_finite()) {
            return Err(Error::config("training.init_std must be finite and >= 0"));
        }
        if !self.training.init_bias.is_finite() {
            return Err(Error::config("training.init_bias must be finite"));
        }
        if !(self.training.lr > 0.0) {
            return Err(Error::config("training.lr must be positive"));
        }
        Ok(Topology {
            stacks,
            stack_input: [sh, sw, stack_c],
            layer_outputs,
            concat_len,
        })
    }
}

//! Architecture configs shipped with the crate.

use crate::error::{Error, Result};

use super::config::{ArchitectureConfig, Family, FcSpec, LayerSpec, TrainingConfig};

const SHIPPED: &[(&str, &str)] = &[
    ("bcnn-cifar10", include_str!("../../configs/bcnn-cifar10.toml")),
    ("bcnn-cifar10-small", include_str!("../../configs/bcnn-cifar10-small.toml")),
    ("bcnn-cifar100", include_str!("../../configs/bcnn-cifar100.toml")),
    ("bcnn-mnist", include_str!("../../configs/bcnn-mnist.toml")),
    ("bcnn-mnist-small", include_str!("../../configs/bcnn-mnist-small.toml")),
    ("srcnn-cifar10", include_str!("../../configs/srcnn-cifar10.toml")),
    ("srcnn-cifar10-m2", include_str!("../../configs/srcnn-cifar10-m2.toml")),
    ("srcnn-cifar10-small", include_str!("../../configs/srcnn-cifar10-small.toml")),
    ("srcnn-cifar100", include_str!("../../configs/srcnn-cifar100.toml")),
    ("srcnn-mnist", include_str!("../../configs/srcnn-mnist.toml")),
    ("srcnn-mnist-small", include_str!("../../configs/srcnn-mnist-small.toml")),
    ("tcnn-cifar10", include_str!("../../configs/tcnn-cifar10.toml")),
    ("tcnn-cifar10-small", include_str!("../../configs/tcnn-cifar10-small.toml")),
    ("tcnn-cifar100", include_str!("../../configs/tcnn-cifar100.toml")),
    ("tcnn-mnist", include_str!("../../configs/tcnn-mnist.toml")),
    ("tcnn-mnist-small", include_str!("../../configs/tcnn-mnist-small.toml")),
];

/// Names of every shipped config.
pub fn names() -> impl Iterator<Item = &'static str> {
    SHIPPED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a shipped config by name.
pub fn get(name: &str) -> Result<ArchitectureConfig> {
    let text = source(name).ok_or_else(|| Error::Config(format!("no shipped config named {name}")))?;
    ArchitectureConfig::from_toml_str(text)
}

pub fn all() -> Result<Vec<ArchitectureConfig>> {
    names().map(get).collect()
}

/// A small SRCNN on 8x8x1 inputs: one level, two convs and a pool per
/// stack, dense 64 -> 8 -> 4, no dropout.
pub fn tiny_srcnn() -> ArchitectureConfig {
    ArchitectureConfig {
        name: "tiny-srcnn".into(),
        family: Family::Srcnn,
        dataset: None,
        dwt_levels: 1,
        input_shape: [8, 8, 1],
        classes: 4,
        leak: 0.1,
        subband_stack: vec![
            LayerSpec::Conv { c_in: 1, c_out: 2, kernel: 3 },
            LayerSpec::Conv { c_in: 2, c_out: 4, kernel: 3 },
            LayerSpec::Pool { window: 2, stride: 2 },
        ],
        fc_stack: vec![
            FcSpec { d_in: 64, d_out: 8, dropout: 0.0 },
            FcSpec { d_in: 8, d_out: 4, dropout: 0.0 },
        ],
        training: TrainingConfig::default(),
    }
}

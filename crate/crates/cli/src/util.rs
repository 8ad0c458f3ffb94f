use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use subband_core::data::{self, Normalization};
use subband_core::model::{zoo, DatasetKind};
use subband_core::ArchitectureConfig;

pub const DATA_ENV: &str = "SUBBAND_DATA";
pub const PREPROCESS_FILE: &str = "preprocess.json";

/// Bad flags, configs or inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and configuration problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<subband_core::Error>() {
            if matches!(
                e,
                subband_core::Error::Config(_) | subband_core::Error::Shape(_) | subband_core::Error::Domain(_)
            ) {
                return 2;
            }
        }
    }
    1
}

/// A config file path, or the name of a shipped config.
pub fn load_config(arg: &str) -> Result<ArchitectureConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(ArchitectureConfig::load(path)?);
    }
    if zoo::source(arg).is_some() {
        return Ok(zoo::get(arg)?);
    }
    Err(usage(format!(
        "config {arg:?} is neither a file nor a shipped config ({})",
        zoo::names().collect::<Vec<_>>().join(", ")
    )))
}

pub fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "mnist" => Ok(DatasetKind::Mnist),
        "cifar10" => Ok(DatasetKind::Cifar10),
        "cifar100" => Ok(DatasetKind::Cifar100),
        _ => Err(format!("unknown dataset {s:?} (expected mnist, cifar10 or cifar100)")),
    }
}

pub fn dataset_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Mnist => "mnist",
        DatasetKind::Cifar10 => "cifar10",
        DatasetKind::Cifar100 => "cifar100",
    }
}

/// Finds the directory holding `kind` under `--data` or the environment root.
pub fn data_dir(arg: Option<&Path>, kind: DatasetKind) -> Result<PathBuf> {
    let root = arg
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| usage(format!("no data directory: pass --data or set {DATA_ENV}")))?;
    data::resolve_dir(&root, kind).ok_or_else(|| {
        usage(format!(
            "no {} files in {} or {}",
            dataset_name(kind),
            root.display(),
            root.join(kind.dir_name()).display()
        ))
    })
}

/// Preprocessing a training run applied, stored next to its checkpoints so
/// evaluation sees the same inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Preprocess {
    pub dataset: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
}

impl Preprocess {
    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(PREPROCESS_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    /// Reads the sidecar in the checkpoint's directory, if any.
    pub fn for_checkpoint(ckpt: &Path) -> Result<Option<Self>> {
        let dir = ckpt.parent().unwrap_or(Path::new("."));
        let path = dir.join(PREPROCESS_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        ))
    }
}

//! `SBNC` checkpoint files.
//!
//! ```text
//! "SBNC" | version u16 | config_len u32 | config TOML
//! | epoch u32
//! | has_rng u8 [seed 32B | stream u64 | word_pos u128]
//! | has_opt u8 [lr f64 | momentum f64 | decay f64 | iteration u64]
//! | records u32 | { name_len u16 | name | TNS4 tensor }*
//! ```
//!
//! All integers little-endian. Velocity buffers are stored as extra records
//! named `velocity/<param>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::tensor::{Element, Tensor4};

use super::config::ArchitectureConfig;
use super::network::Model;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBNC";
pub const CHECKPOINT_VERSION: u16 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ArchitectureConfig,
    pub epoch: u32,
    pub params: Vec<(String, Tensor4<T>)>,
    pub optimizer: Option<OptimizerState<T>>,
    pub rng: Option<RngState>,
}

impl<T: Element> Checkpoint<T> {
    pub fn new(
        model: &Model<T>,
        epoch: u32,
        optimizer: Option<&OptimizerState<T>>,
        rng: Option<RngState>,
    ) -> Self {
        Self {
            config: model.config().clone(),
            epoch,
            params: model
                .param_names()
                .into_iter()
                .zip(model.params().into_iter().cloned())
                .collect(),
            optimizer: optimizer.cloned(),
            rng,
        }
    }

    /// Rebuilds the model, checking every stored tensor against the config.
    pub fn model(&self) -> Result<Model<T>> {
        let mut model = Model::build(&self.config, 0)?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameter tensors, config needs {}",
                self.params.len(),
                names.len()
            )));
        }
        for (want, (got, _)) in names.iter().zip(&self.params) {
            if want != got {
                return Err(Error::Checkpoint(format!("expected tensor {want}, found {got}")));
            }
        }
        model
            .set_params(self.params.iter().map(|(_, t)| t.clone()).collect())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_toml_string()?;
        out.extend_from_slice(&len_u32(cfg.len(), "config")?.to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        match &self.rng {
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.seed);
                out.extend_from_slice(&r.stream.to_le_bytes());
                out.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => out.push(0),
        }
        match &self.optimizer {
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.lr.to_le_bytes());
                out.extend_from_slice(&o.momentum.to_le_bytes());
                out.extend_from_slice(&o.decay.to_le_bytes());
                out.extend_from_slice(&o.iteration.to_le_bytes());
            }
            None => out.push(0),
        }
        let mut records: Vec<(String, &Tensor4<T>)> =
            self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some(o) = &self.optimizer {
            if o.velocity.len() != self.params.len() {
                return Err(Error::Checkpoint(format!(
                    "{} velocity buffers for {} parameters",
                    o.velocity.len(),
                    self.params.len()
                )));
            }
            for ((name, _), v) in self.params.iter().zip(&o.velocity) {
                records.push((format!("{VELOCITY_PREFIX}{name}"), v));
            }
        }
        out.extend_from_slice(&len_u32(records.len(), "record count")?.to_le_bytes());
        for (name, t) in records {
            let n = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.write_to(&mut out)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::corrupt(0, "not an SBNC checkpoint"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_at = r.pos;
        let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?)
            .map_err(|_| Error::corrupt(cfg_at as u64, "config is not UTF-8"))?;
        let config = ArchitectureConfig::from_toml_str(cfg_text)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let epoch = r.u32("epoch")?;
        let rng = match r.flag("rng flag")? {
            true => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32, "rng seed")?);
                let stream = r.u64("rng stream")?;
                let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
                Some(RngState { seed, stream, word_pos })
            }
            false => None,
        };
        let opt = match r.flag("optimizer flag")? {
            true => Some((
                r.f64("lr")?,
                r.f64("momentum")?,
                r.f64("decay")?,
                r.u64("iteration")?,
            )),
            false => None,
        };
        let count = r.u32("record count")? as usize;
        let mut params = Vec::new();
        let mut velocity = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::corrupt(name_at as u64, "tensor name is not UTF-8"))?
                .to_string();
            let (t, used) = Tensor4::read_from(&bytes[r.pos..], r.pos as u64)?;
            r.pos += used;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocity.push((p.to_string(), t)),
                None => params.push((name, t)),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::corrupt(r.pos as u64, "trailing bytes after last record"));
        }
        let optimizer = match opt {
            Some((lr, momentum, decay, iteration)) => {
                if velocity.len() != params.len()
                    || velocity.iter().zip(&params).any(|((a, _), (b, _))| a != b)
                {
                    return Err(Error::Checkpoint("velocity records do not match parameters".into()));
                }
                Some(OptimizerState {
                    velocity: velocity.into_iter().map(|(_, t)| t).collect(),
                    lr,
                    momentum,
                    decay,
                    iteration,
                })
            }
            None if !velocity.is_empty() => {
                return Err(Error::Checkpoint("velocity records without optimizer state".into()));
            }
            None => None,
        };
        let ckpt = Self {
            config,
            epoch,
            params,
            optimizer,
            rng,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a checkpoint and checks it predicts `classes` classes.
    pub fn load_for_classes(path: impl AsRef<Path>, classes: usize) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.config.classes != classes {
            return Err(Error::config(format!(
                "checkpoint model predicts {} classes, dataset has {classes}",
                ckpt.config.classes
            )));
        }
        Ok(ckpt)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::corrupt(self.bytes.len() as u64, format!("truncated while reading {what}"))),
        }
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        let at = self.pos;
        match self.take(1, what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::corrupt(at as u64, format!("{what} must be 0 or 1, got {b}"))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

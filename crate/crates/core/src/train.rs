//! Mini-batch training and evaluation loops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{batches, BatchPlan};
use crate::error::{Error, Result};
use crate::layers::{argmax, in_top_k, softmax_xent, softmax_xent_batch};
use crate::model::{ArchitectureConfig, Checkpoint, Model, RngState};
use crate::optim::{sgd_step, LrSchedule, OptimizerState};
use crate::tensor::{Element, Tensor4};

/// Seed offset separating the shuffle streams from the init streams.
const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
/// ChaCha stream used for dropout masks.
const DROPOUT_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

impl EvalReport {
    /// Top-5 minus top-1 accuracy, in percentage points.
    pub fn top5_gap(&self) -> f64 {
        100.0 * (self.top5 - self.top1)
    }
}

/// Eval-mode accuracy and mean loss over `images` (already normalized).
/// Batches run in parallel; the reduction is sequential, so the result does
/// not depend on thread count.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    images: &Tensor4<T>,
    labels: &[usize],
    batch_size: usize,
) -> Result<EvalReport> {
    let plan = BatchPlan::sequential(batch_size)?;
    let groups = plan.index_batches(labels.len());
    let parts = groups
        .par_iter()
        .map(|idx| {
            let x = images.select(idx)?;
            let logits = model.forward(&x)?;
            let mut loss = 0.0;
            let (mut c1, mut c5) = (0usize, 0usize);
            for (j, &i) in idx.iter().enumerate() {
                let row = logits.sample(j);
                loss += softmax_xent(row, labels[i])?.0.as_f64();
                c1 += usize::from(argmax(row) == labels[i]);
                c5 += usize::from(in_top_k(row, labels[i], 5));
            }
            Ok((loss, c1, c5))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let (mut loss, mut c1, mut c5) = (0.0, 0, 0);
    for (l, a, b) in parts {
        loss += l;
        c1 += a;
        c5 += b;
    }
    let d = n.max(1) as f64;
    Ok(EvalReport {
        n,
        loss: loss / d,
        top1: c1 as f64 / d,
        top5: c5 as f64 / d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Model, optimizer and RNG state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl<T: Element> Trainer<T> {
    pub fn new(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let model = Model::build(config, seed)?;
        let optimizer = OptimizerState::new(model.params(), config.training.sgd())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DROPOUT_STREAM);
        Ok(Self {
            model,
            optimizer,
            schedule: config.training.schedule(),
            batch_size: config.training.batch_size,
            seed,
            epoch: 0,
            rng,
        })
    }

    /// Restores a run from a checkpoint that carries optimizer and RNG state.
    pub fn resume(ckpt: &Checkpoint<T>, seed: u64) -> Result<Self> {
        let model = ckpt.model()?;
        let optimizer = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        let rng = ckpt
            .rng
            .ok_or_else(|| Error::Checkpoint("checkpoint has no RNG state".into()))?
            .restore();
        Ok(Self {
            schedule: ckpt.config.training.schedule(),
            batch_size: ckpt.config.training.batch_size,
            model,
            optimizer,
            seed,
            epoch: ckpt.epoch as usize,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::new(
            &self.model,
            self.epoch as u32,
            Some(&self.optimizer),
            Some(RngState::capture(&self.rng)),
        )
    }

    /// One SGD step on a batch; returns `(mean loss, correct)`.
    pub fn step(&mut self, x: &Tensor4<T>, labels: &[usize]) -> Result<(f64, usize)> {
        let (logits, tape) = self.model.forward_train(x, &mut self.rng)?;
        let bl = softmax_xent_batch(&logits, labels)?;
        let loss = bl.loss.as_f64();
        if !loss.is_finite() {
            let layer = self
                .model
                .first_non_finite(&tape)
                .unwrap_or_else(|| if logits.all_finite() { "loss".into() } else { "logits".into() });
            return Err(Error::NonFinite { layer });
        }
        let grads = self.model.backward(&tape, &bl.grad)?;
        if let Some(i) = grads.tensors.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFinite {
                layer: format!("gradient of {}", self.model.param_names()[i]),
            });
        }
        let mut params = self.model.params_mut();
        sgd_step(&mut params, &grads.tensors, &mut self.optimizer)?;
        Ok((loss, bl.correct))
    }

    /// Trains one epoch over `images` (already normalized).
    pub fn run_epoch(&mut self, images: &Tensor4<T>, labels: &[usize]) -> Result<EpochStats> {
        let lr = self.schedule.lr(self.epoch);
        self.optimizer.set_lr(lr)?;
        let plan = BatchPlan::new(self.batch_size, self.seed.wrapping_add(SHUFFLE_SALT), self.epoch as u64)?;
        let (mut loss, mut correct) = (0.0, 0usize);
        for batch in batches(images, labels, plan) {
            let (x, y) = batch?;
            let (l, c) = self.step(&x, &y)?;
            loss += l * y.len() as f64;
            correct += c;
        }
        self.epoch += 1;
        let n = labels.len().max(1) as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            lr,
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }
}

//! SGD with momentum and weight decay, plus the Gaussian/constant
//! initialization rule and the learning-rate schedule.
//!
//! One step, per element, in this order:
//!
//! ```text
//! v <- momentum·v - (decay·lr)·w - lr·g
//! w <- w + v
//! ```
//!
//! `g` must already be averaged over the mini-batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_DECAY: f64 = 0.0005;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const INIT_WEIGHT_STD: f64 = 0.01;
pub const INIT_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            decay: DEFAULT_DECAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    /// One buffer per parameter tensor, same shape, zero at start.
    pub velocity: Vec<Tensor4<T>>,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub iteration: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor4<T>>, config: SgdConfig) -> Result<Self> {
        check_lr(config.lr)?;
        Ok(Self {
            velocity: params
                .into_iter()
                .map(|p| Tensor4::zeros_like_shape(p.shape()))
                .collect(),
            lr: config.lr,
            momentum: config.momentum,
            decay: config.decay,
            iteration: 0,
        })
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// Applies one momentum/weight-decay update to every parameter tensor.
pub fn sgd_step<T: Element>(
    params: &mut [&mut Tensor4<T>],
    grads: &[Tensor4<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    check_lr(state.lr)?;
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(format!(
                "parameter {i}: shape {} with gradient {} and velocity {}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let lr = T::from_f64(state.lr);
    let momentum = T::from_f64(state.momentum);
    let decay = T::from_f64(state.decay);
    let decay_lr = decay * lr;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi - decay_lr * *w - lr * gi;
            *w = *w + *vi;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Fills `t` with N(0, std²) draws. Each tensor gets its own ChaCha stream so
/// the values do not depend on initialization order or thread count.
pub fn gaussian_fill<T: Element>(t: &mut Tensor4<T>, std: f64, seed: u64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
    for v in t.data_mut() {
        *v = T::from_f64(normal.sample(&mut rng));
    }
}

/// One multiplicative step of a schedule: from `epoch` on, the rate is scaled
/// by `factor` (steps compound).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    #[serde(default)]
    pub steps: Vec<LrStep>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::constant(DEFAULT_LR)
    }
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, steps: Vec::new() }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .filter(|s| epoch >= s.epoch)
            .fold(self.base, |lr, s| lr * s.factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor4<f64> {
        Tensor4::full([1, 1, 1, 1], v).unwrap()
    }

    fn step_once(w: f64, v: f64, g: f64, lr: f64, momentum: f64, decay: f64) -> (f64, f64) {
        let mut p = scalar(w);
        let mut st = OptimizerState {
            velocity: vec![scalar(v)],
            lr,
            momentum,
            decay,
            iteration: 0,
        };
        sgd_step(&mut [&mut p], &[scalar(g)], &mut st).unwrap();
        (p.data()[0], st.velocity[0].data()[0])
    }

    #[test]
    fn direct_substitution() {
        let (w, v) = step_once(1.0, 0.0, 1.0, 0.01, 0.9, 0.0005);
        assert_eq!(v, 0.9 * 0.0 - 0.0005 * 0.01 * 1.0 - 0.01 * 1.0);
        assert!((v + 0.010005).abs() < 1e-15);
        assert!((w - 0.989995).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let (w, _) = step_once(2.0, 0.0, 0.0, 0.01, 0.9, 0.0005);
        assert!((w - 2.0 * (1.0 - 5e-6)).abs() < 1e-15);
    }

    #[test]
    fn tiny_lr_leaves_weights() {
        let (w, _) = step_once(0.3, 0.0, 5.0, 1e-300, 0.9, 0.0005);
        assert_eq!(w, 0.3);
    }

    #[test]
    fn quadratic_plain_descent() {
        // L = w²/2 ⇒ g = w
        let (w, _) = step_once(0.8, 0.0, 0.8, 0.1, 0.0, 0.0);
        assert!((w - 0.8 * (1.0 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn velocity_decays_geometrically() {
        let mut p = scalar(1.0);
        let mut st = OptimizerState {
            velocity: vec![scalar(1.0)],
            lr: 0.01,
            momentum: 0.9,
            decay: 0.0,
            iteration: 0,
        };
        let mut want = 1.0;
        for _ in 0..20 {
            sgd_step(&mut [&mut p], &[scalar(0.0)], &mut st).unwrap();
            want *= 0.9;
        }
        assert!((st.velocity[0].data()[0] - want).abs() < 1e-15);
        assert_eq!(st.iteration, 20);
    }

    #[test]
    fn errors() {
        let mut p = scalar(1.0);
        let mut st = OptimizerState::new([&p], SgdConfig::default()).unwrap();
        let bad = Tensor4::zeros([1, 1, 1, 2]).unwrap();
        assert!(matches!(sgd_step(&mut [&mut p], &[bad], &mut st), Err(Error::Shape(_))));
        assert!(matches!(st.set_lr(0.0), Err(Error::Config(_))));
        assert!(OptimizerState::<f64>::new([&p], SgdConfig { lr: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn schedule() {
        assert_eq!(LrSchedule::default().lr(0), 0.01);
        assert_eq!(LrSchedule::default().lr(123), 0.01);
        let s = LrSchedule {
            base: 0.01,
            steps: vec![LrStep { epoch: 10, factor: 0.1 }],
        };
        assert_eq!(s.lr(9), 0.01);
        assert!((s.lr(10) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn init_statistics() {
        let mut t = Tensor4::<f64>::zeros([1, 1, 1000, 1000]).unwrap();
        gaussian_fill(&mut t, INIT_WEIGHT_STD, 17, 0);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 3.0 * 0.01 / 1e3, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() <= 0.01 * 0.01, "std {}", var.sqrt());
    }
}

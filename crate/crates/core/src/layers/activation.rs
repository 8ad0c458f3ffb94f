use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x` for `x >= 0`, `leak * x` otherwise.
pub fn leaky_relu<T: Element>(x: &Tensor4<T>, leak: T) -> Tensor4<T> {
    x.map(|v| if v >= T::zero() { v } else { leak * v })
}

pub fn leaky_relu_backward<T: Element>(pre: &Tensor4<T>, dy: &Tensor4<T>, leak: T) -> Result<Tensor4<T>> {
    if pre.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "leaky relu gradient shape {} does not match {}",
            dy.shape(),
            pre.shape()
        )));
    }
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p >= T::zero() { g } else { leak * g })
        .collect();
    Tensor4::from_shape_vec(pre.shape(), data)
}

/// Inverted dropout configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub rng_seed: u64,
}

impl DropoutSpec {
    pub fn new(rate: f64, rng_seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { rate, rng_seed })
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// applied per-element factors are returned for the backward pass. Eval mode
/// and `rate == 0` are the identity.
pub fn dropout<T: Element, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor4::from_shape_vec(x.shape(), data)?, Some(mask)))
}

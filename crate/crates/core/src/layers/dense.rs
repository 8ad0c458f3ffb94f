use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::{Element, Shape4, Tensor4};

use super::activation::leaky_relu;

/// Fully connected layer `y = act(x · W + b)`.
///
/// `weights` is `(1, 1, d_in, d_out)`; `leak == None` marks the output layer,
/// which emits raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<T> {
    pub weights: Tensor4<T>,
    /// `(1, 1, 1, d_out)`
    pub bias: Tensor4<T>,
    pub leak: Option<T>,
}

impl<T: Element> FcLayer<T> {
    pub fn new(weights: Tensor4<T>, bias: Tensor4<T>, leak: Option<T>) -> Result<Self> {
        let [a, b, _, d_out] = weights.dims();
        if a != 1 || b != 1 {
            return Err(Error::shape(format!(
                "dense weights must be (1, 1, d_in, d_out), got {}",
                weights.shape()
            )));
        }
        if bias.dims() != [1, 1, 1, d_out] {
            return Err(Error::shape(format!(
                "bias shape {} does not match d_out = {d_out}",
                bias.shape()
            )));
        }
        if let Some(l) = leak {
            if !(T::zero()..=T::one()).contains(&l) {
                return Err(Error::config(format!("leak {l:?} outside [0, 1]")));
            }
        }
        Ok(Self { weights, bias, leak })
    }

    pub fn d_in(&self) -> usize {
        self.weights.dims()[2]
    }

    pub fn d_out(&self) -> usize {
        self.weights.dims()[3]
    }
}

fn check_input<T: Element>(x: &Tensor4<T>, layer: &FcLayer<T>) -> Result<()> {
    if x.shape().sample_len() != layer.d_in() {
        return Err(Error::shape(format!(
            "dense layer expects {} features per sample, got {}",
            layer.d_in(),
            x.shape().sample_len()
        )));
    }
    Ok(())
}

/// `x · W + b` for every sample; `x` may have any per-sample shape whose
/// length is `d_in`. Output is `(n, 1, 1, d_out)`.
pub fn fc_affine<T: Element>(x: &Tensor4<T>, layer: &FcLayer<T>) -> Result<Tensor4<T>> {
    check_input(x, layer)?;
    let n = x.shape().n;
    let d_out = layer.d_out();
    let mut out = Tensor4::zeros_like_shape(Shape4::new(n, 1, 1, d_out)?);
    for row in out.data_mut().chunks_exact_mut(d_out) {
        row.copy_from_slice(layer.bias.data());
    }
    gemm(false, false, n, d_out, layer.d_in(), T::one(), x.data(), layer.weights.data(), T::one(), out.data_mut());
    Ok(out)
}

/// Affine map followed by the layer's leaky ReLU (none for the output layer).
pub fn fc_forward<T: Element>(x: &Tensor4<T>, layer: &FcLayer<T>) -> Result<Tensor4<T>> {
    let pre = fc_affine(x, layer)?;
    Ok(match layer.leak {
        Some(l) => leaky_relu(&pre, l),
        None => pre,
    })
}

pub struct FcGrads<T> {
    pub weights: Tensor4<T>,
    pub bias: Tensor4<T>,
    /// Same shape as the forward input.
    pub input: Tensor4<T>,
}

/// Gradients of [`fc_affine`] given `dy` with respect to its output.
pub fn fc_backward<T: Element>(x: &Tensor4<T>, layer: &FcLayer<T>, dy: &Tensor4<T>) -> Result<FcGrads<T>> {
    check_input(x, layer)?;
    let n = x.shape().n;
    let (d_in, d_out) = (layer.d_in(), layer.d_out());
    if dy.dims() != [n, 1, 1, d_out] {
        return Err(Error::shape(format!(
            "dense upstream gradient has shape {}, expected ({n}, 1, 1, {d_out})",
            dy.shape()
        )));
    }
    let mut dw = Tensor4::zeros_like_shape(layer.weights.shape());
    gemm(true, false, d_in, d_out, n, T::one(), x.data(), dy.data(), T::zero(), dw.data_mut());
    let mut db = Tensor4::zeros_like_shape(layer.bias.shape());
    for row in dy.data().chunks_exact(d_out) {
        for (b, &v) in db.data_mut().iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    let mut dx = Tensor4::zeros_like_shape(x.shape());
    gemm(false, true, n, d_in, d_out, T::one(), dy.data(), layer.weights.data(), T::zero(), dx.data_mut());
    Ok(FcGrads { weights: dw, bias: db, input: dx })
}

/// Flattens each output per sample and concatenates them in order, giving
/// `(n, 1, 1, Σ h·w·c)`.
pub fn concat_features<T: Element>(outputs: &[Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::shape("concat needs at least one input"))?;
    let n = first.shape().n;
    if let Some(bad) = outputs.iter().find(|o| o.shape().n != n) {
        return Err(Error::shape(format!(
            "concat batch mismatch: {} vs {n}",
            bad.shape().n
        )));
    }
    let width: usize = outputs.iter().map(|o| o.shape().sample_len()).sum();
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        for o in outputs {
            data.extend_from_slice(o.sample(i));
        }
    }
    Tensor4::from_shape_vec(Shape4::new(n, 1, 1, width)?, data)
}

/// Inverse of [`concat_features`]: splits a feature gradient back into the
/// given per-block shapes.
pub fn split_features<T: Element>(features: &Tensor4<T>, shapes: &[Shape4]) -> Result<Vec<Tensor4<T>>> {
    let n = features.shape().n;
    let width: usize = shapes.iter().map(Shape4::sample_len).sum();
    if features.shape().sample_len() != width || shapes.iter().any(|s| s.n != n) {
        return Err(Error::shape("feature split does not match block shapes"));
    }
    let mut blocks: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.len())).collect();
    for i in 0..n {
        let mut at = 0;
        let row = features.sample(i);
        for (block, s) in blocks.iter_mut().zip(shapes) {
            block.extend_from_slice(&row[at..at + s.sample_len()]);
            at += s.sample_len();
        }
    }
    blocks
        .into_iter()
        .zip(shapes)
        .map(|(b, &s)| Tensor4::from_shape_vec(s, b))
        .collect()
}

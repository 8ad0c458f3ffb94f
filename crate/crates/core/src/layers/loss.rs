use crate::error::{Error, Result};
use crate::tensor::{Element, Shape4, Tensor4};

/// Numerically stable softmax with cross-entropy against `label`.
/// Returns `(-ln p[label], p)`.
pub fn softmax_xent<T: Element>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Index(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let probs: Vec<T> = exps.iter().map(|&e| e / total).collect();
    // -ln p = ln Σ exp(z - max) - (z_label - max), exact even when p underflows
    let loss = total.ln() - (logits[label] - max);
    Ok((loss, probs))
}

/// Batch-mean cross-entropy and its gradient `(p - onehot) / n` with
/// respect to `(n, 1, 1, classes)` logits.
pub struct BatchLoss<T> {
    pub loss: T,
    pub grad: Tensor4<T>,
    pub correct: usize,
}

pub fn softmax_xent_batch<T: Element>(logits: &Tensor4<T>, labels: &[usize]) -> Result<BatchLoss<T>> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    let classes = s.sample_len();
    let inv_n = T::from_f64(1.0 / s.n as f64);
    let mut total = T::zero();
    let mut correct = 0;
    let mut grad = Vec::with_capacity(s.len());
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.sample(i);
        let (loss, mut probs) = softmax_xent(row, label)?;
        if argmax(row) == label {
            correct += 1;
        }
        total = total + loss;
        probs[label] = probs[label] - T::one();
        grad.extend(probs.into_iter().map(|p| p * inv_n));
    }
    Ok(BatchLoss {
        loss: total * inv_n,
        grad: Tensor4::from_shape_vec(Shape4::new(s.n, 1, 1, classes)?, grad)?,
        correct,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Whether `label` is among the `k` largest entries of `row` (ties broken
/// toward lower indices).
pub fn in_top_k<T: Element>(row: &[T], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    ahead < k
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, probs) = softmax_xent(&[0.3f64; 7], 2).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-12));
    }

    #[test]
    fn large_logits_are_stable() {
        let (loss, probs) = softmax_xent(&[1000.0f32, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-6 && loss.is_finite());
        assert!(probs.iter().all(|p| p.is_finite()));
        let (loss, _) = softmax_xent(&[1000.0f32, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let z: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..10);
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            let want = -(z[label].exp() / denom).ln();
            let (loss, probs) = softmax_xent(&z, label).unwrap();
            assert!((loss - want).abs() < 1e-6);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_xent(&[0.0f32, 1.0], 2), Err(Error::Index(_))));
    }

    #[test]
    fn top_k() {
        let row = [0.1f32, 0.5, 0.3, 0.5];
        assert_eq!(argmax(&row), 1);
        assert!(in_top_k(&row, 1, 1));
        assert!(!in_top_k(&row, 3, 1));
        assert!(in_top_k(&row, 3, 2));
        assert!(!in_top_k(&row, 0, 3));
    }
}

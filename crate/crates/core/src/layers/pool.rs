use crate::error::{Error, Result};
use crate::tensor::{Element, Shape4, Tensor4};

/// Max pooling window and stride. Shipped configs use 2x2 / stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolSpec {
    pub fn square(size: usize) -> Self {
        Self {
            window: (size, size),
            stride: (size, size),
        }
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.window;
        let (sh, sw) = self.stride;
        if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
            return Err(Error::config("pool window and stride must be >= 1"));
        }
        if h < ph || w < pw || (h - ph) % sh != 0 || (w - pw) % sw != 0 {
            return Err(Error::shape(format!(
                "{h}x{w} input does not tile under a {ph}x{pw} window with stride {sh}x{sw}"
            )));
        }
        Ok(((h - ph) / sh + 1, (w - pw) / sw + 1))
    }
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self::square(2)
    }
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input index it was taken from. Ties go to the lowest flat index.
pub fn maxpool_forward<T: Element>(x: &Tensor4<T>, p: &PoolSpec) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    let (oh, ow) = p.output_extent(s.h, s.w)?;
    let out_shape = Shape4 { h: oh, w: ow, ..s };
    let mut y = Tensor4::zeros_like_shape(out_shape);
    let mut argmax = vec![0usize; out_shape.len()];
    let src = x.data();
    let mut o = 0;
    for n in 0..s.n {
        for i in 0..oh {
            for j in 0..ow {
                for c in 0..s.c {
                    let mut best_idx = x.offset(n, i * p.stride.0, j * p.stride.1, c);
                    let mut best = src[best_idx];
                    for di in 0..p.window.0 {
                        for dj in 0..p.window.1 {
                            let idx = x.offset(n, i * p.stride.0 + di, j * p.stride.1 + dj, c);
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.data_mut()[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    Ok((y, argmax))
}

/// Routes each upstream gradient to the input element that won the max.
pub fn maxpool_backward<T: Element>(input_shape: Shape4, argmax: &[usize], dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if argmax.len() != dy.len() {
        return Err(Error::shape(format!(
            "pool gradient has {} elements but {} argmax entries were recorded",
            dy.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor4::zeros_like_shape(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two() {
        let x = Tensor4::from_vec([1, 2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn constant_preserved() {
        let x = Tensor4::full([2, 4, 6, 3], 1.25f32).unwrap();
        let (y, arg) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        assert_eq!(y.dims(), [2, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.25));
        // all ties: the window's top-left element wins
        assert_eq!(arg[0], x.offset(0, 0, 0, 0));
        assert_eq!(arg[4], x.offset(0, 0, 2, 1));
    }

    #[test]
    fn random_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // coarse values make ties common
        let data: Vec<f32> = (0..2 * 8 * 8 * 2).map(|_| rng.random_range(0..4) as f32).collect();
        let x = Tensor4::from_vec([2, 8, 8, 2], data).unwrap();
        let (y, arg) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        for n in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    for c in 0..2 {
                        let mut cands = Vec::new();
                        for di in 0..2 {
                            for dj in 0..2 {
                                let idx = x.offset(n, 2 * i + di, 2 * j + dj, c);
                                cands.push((x.data()[idx], idx));
                            }
                        }
                        let m = cands.iter().map(|c| c.0).fold(f32::MIN, f32::max);
                        let first = cands.iter().filter(|c| c.0 == m).map(|c| c.1).min().unwrap();
                        let o = y.offset(n, i, j, c);
                        assert_eq!(y.data()[o], m);
                        assert_eq!(arg[o], first);
                    }
                }
            }
        }
    }

    #[test]
    fn non_divisible_rejected() {
        let x = Tensor4::<f32>::zeros([1, 5, 4, 1]).unwrap();
        assert!(matches!(maxpool_forward(&x, &PoolSpec::square(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_scatters() {
        let x = Tensor4::from_vec([1, 2, 2, 1], vec![1.0f64, 5.0, 3.0, 4.0]).unwrap();
        let (_, arg) = maxpool_forward(&x, &PoolSpec::square(2)).unwrap();
        let dy = Tensor4::full([1, 1, 1, 1], 2.5).unwrap();
        let dx = maxpool_backward(x.shape(), &arg, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.5, 0.0, 0.0]);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::DEFAULT_BATCH_SIZE;
use crate::tensor::{Element, Tensor4};

/// Mini-batch order for one epoch. Epoch `e` shuffles with ChaCha stream `e`
/// of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
    pub shuffle: bool,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            epoch: 0,
            shuffle: true,
        }
    }
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(Self {
            batch_size,
            seed,
            epoch,
            shuffle: true,
        })
    }

    pub fn sequential(batch_size: usize) -> Result<Self> {
        Ok(Self {
            shuffle: false,
            ..Self::new(batch_size, 0, 0)?
        })
    }

    pub fn num_batches(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// A permutation of `0..n`.
    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(self.epoch);
            idx.shuffle(&mut rng);
        }
        idx
    }

    /// Index groups in order; the last one may be short.
    pub fn index_batches(&self, n: usize) -> Vec<Vec<usize>> {
        self.order(n).chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Iterates `(images, labels)` batches gathered from `images` / `labels`.
pub fn batches<'a, T: Element>(
    images: &'a Tensor4<T>,
    labels: &'a [usize],
    plan: BatchPlan,
) -> impl Iterator<Item = Result<(Tensor4<T>, Vec<usize>)>> + 'a {
    plan.index_batches(labels.len()).into_iter().map(move |idx| {
        let x = images.select(&idx)?;
        let y = idx.iter().map(|&i| labels[i]).collect();
        Ok((x, y))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let p = BatchPlan::new(64, 1, 0).unwrap();
        let b = p.index_batches(60_000);
        assert_eq!(b.len(), 938);
        assert_eq!(b.last().unwrap().len(), 32);
        assert_eq!(p.num_batches(60_000), 938);
    }

    #[test]
    fn permutation_and_determinism() {
        let p = BatchPlan::new(7, 42, 3).unwrap();
        let a = p.order(100);
        assert_eq!(a, p.order(100));
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(a, BatchPlan::new(7, 42, 4).unwrap().order(100));
        assert_eq!(BatchPlan::sequential(7).unwrap().order(5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn gathers_rows() {
        let x = Tensor4::from_vec([3, 1, 1, 2], vec![0.0f32, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let labels = [0, 1, 2];
        let all: Vec<_> = batches(&x, &labels, BatchPlan::new(2, 5, 0).unwrap())
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(all.len(), 2);
        for (xb, yb) in &all {
            for (j, &l) in yb.iter().enumerate() {
                assert_eq!(xb.sample(j)[0], 2.0 * l as f32);
            }
        }
    }
}

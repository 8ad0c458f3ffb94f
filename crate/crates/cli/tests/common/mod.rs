use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_core::data::idx::{encode_idx, IMAGES_MAGIC, LABELS_MAGIC, MNIST_FILES};

/// Writes a small learnable MNIST-shaped dataset: each class lights a
/// different 8x4 block.
pub fn synthetic_mnist(dir: &Path, n_train: usize, n_test: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (split, n) in [(0, n_train), (1, n_test)] {
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let mut px = vec![0u8; n * 784];
        for (i, &l) in labels.iter().enumerate() {
            let img = &mut px[i * 784..(i + 1) * 784];
            let (r0, c0) = (2 + 2 * (l as usize / 5), 2 + 4 * (l as usize % 5));
            for r in r0..r0 + 8 {
                for c in c0..c0 + 4 {
                    img[r * 28 + c] = 200 + rng.random_range(0..56);
                }
            }
        }
        fs::write(dir.join(MNIST_FILES[2 * split]), encode_idx(IMAGES_MAGIC, &[n, 28, 28], &px)).unwrap();
        fs::write(dir.join(MNIST_FILES[2 * split + 1]), encode_idx(LABELS_MAGIC, &[n], &labels)).unwrap();
    }
}

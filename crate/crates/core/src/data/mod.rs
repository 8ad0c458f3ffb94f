//! MNIST and CIFAR-10/100 loading, verification, normalization and batching.
//!
//! Expected layout under a data root:
//!
//! ```text
//! <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! <root>/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
//! <root>/cifar-100-binary/{train,test}.bin
//! ```
//!
//! A path that directly contains the files is accepted too.

pub mod batch;
pub mod cifar;
pub mod idx;
pub mod verify;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::DatasetKind;
use crate::tensor::{Element, Tensor4};

pub use batch::{batches, BatchPlan};
pub use cifar::{load_cifar, parse_cifar, CifarVariant};
pub use idx::{load_mnist, parse_idx};
pub use verify::{verify_dir, FileReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub split: Split,
    pub classes: usize,
    /// `(n, h, w, c)` pixels in `[0, 1]` until normalized.
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
}

impl<T: Element> Dataset<T> {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        classes: usize,
        images: Tensor4<T>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!("label {l} outside 0..{classes}")));
        }
        Ok(Self {
            name: name.into(),
            split,
            classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them when `n` is larger).
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = (0..n).collect();
        Self::new(
            self.name.clone(),
            self.split,
            self.classes,
            self.images.select(&idx)?,
            self.labels[..n].to_vec(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair<T> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

/// Per-channel standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Normalization {
    pub fn fit<T: Element>(images: &Tensor4<T>) -> Self {
        let c = images.shape().c;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for px in images.data().chunks_exact(c) {
            for (ch, &v) in px.iter().enumerate() {
                let v = v.as_f64();
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        let n = (images.len() / c) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply<T: Element>(&self, images: &Tensor4<T>) -> Result<Tensor4<T>> {
        let c = images.shape().c;
        if c != self.mean.len() {
            return Err(Error::shape(format!(
                "normalization fitted on {} channels, input has {c}",
                self.mean.len()
            )));
        }
        let mut out = images.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = T::from_f64((v.as_f64() - self.mean[ch]) / self.std[ch]);
            }
        }
        Ok(out)
    }
}

impl DatasetKind {
    /// Subdirectory of the data root holding this dataset.
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
            DatasetKind::Cifar100 => "cifar-100-binary",
        }
    }

    fn marker(self) -> &'static str {
        match self {
            DatasetKind::Mnist => idx::MNIST_FILES[0],
            DatasetKind::Cifar10 => "test_batch.bin",
            DatasetKind::Cifar100 => "test.bin",
        }
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [32, 32, 1],
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => [32, 32, 3],
        }
    }
}

fn has_marker(dir: &Path, kind: DatasetKind) -> bool {
    match kind {
        DatasetKind::Mnist => idx::find_file(dir, kind.marker()).is_some(),
        _ => dir.join(kind.marker()).is_file(),
    }
}

/// The directory that holds `kind`'s files: `path` itself or its standard
/// subdirectory.
pub fn resolve_dir(path: &Path, kind: DatasetKind) -> Option<PathBuf> {
    if has_marker(path, kind) {
        return Some(path.to_path_buf());
    }
    let sub = path.join(kind.dir_name());
    has_marker(&sub, kind).then_some(sub)
}

/// Loads both splits of `kind` from `path` (see the module docs for layout).
pub fn load<T: Element>(kind: DatasetKind, path: &Path) -> Result<DatasetPair<T>> {
    let dir = resolve_dir(path, kind).ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {kind:?} files under {}", path.display()),
        ))
    })?;
    match kind {
        DatasetKind::Mnist => load_mnist(&dir),
        DatasetKind::Cifar10 => load_cifar(&dir, CifarVariant::Ten),
        DatasetKind::Cifar100 => load_cifar(&dir, CifarVariant::Hundred),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_contract() {
        let data: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let train = Tensor4::from_vec([4, 2, 2, 3], data).unwrap();
        let norm = Normalization::fit(&train);
        let z = norm.apply(&train).unwrap();
        let fresh = Normalization::fit(&z);
        for ch in 0..3 {
            assert!(fresh.mean[ch].abs() < 1e-3);
            assert!((fresh.std[ch] - 1.0).abs() < 1e-9);
        }
        let test = Tensor4::full([1, 2, 2, 3], 0.5).unwrap();
        let zt = norm.apply(&test).unwrap();
        assert!((zt.data()[0] - (0.5 - norm.mean[0]) / norm.std[0]).abs() < 1e-15);
    }

    #[test]
    fn constant_images_stay_finite() {
        let t = Tensor4::full([3, 4, 4, 1], 0.25f32).unwrap();
        let norm = Normalization::fit(&t);
        assert_eq!(norm.std[0], STD_FLOOR);
        assert!(norm.apply(&t).unwrap().all_finite());
        assert!(norm.apply(&Tensor4::<f32>::zeros([1, 1, 1, 2]).unwrap()).is_err());
    }

    #[test]
    fn dataset_checks_labels() {
        let x = Tensor4::<f32>::zeros([2, 1, 1, 1]).unwrap();
        assert!(Dataset::new("d", Split::Train, 3, x.clone(), vec![0, 3]).is_err());
        assert!(Dataset::new("d", Split::Train, 3, x.clone(), vec![0]).is_err());
        let d = Dataset::new("d", Split::Train, 3, x, vec![0, 2]).unwrap();
        assert_eq!(d.truncate(1).unwrap().labels, vec![0]);
        assert_eq!(d.truncate(10).unwrap().len(), 2);
    }

    #[test]
    fn missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(resolve_dir(dir.path(), DatasetKind::Mnist).is_none());
        assert!(matches!(load::<f32>(DatasetKind::Cifar10, dir.path()), Err(Error::Io(_))));
    }
}

//! CIFAR-10 / CIFAR-100 binary batches: per record, the label byte(s) then
//! 1024 red, 1024 green and 1024 blue bytes in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4};

use super::idx::to_byte;
use super::{Dataset, DatasetPair, Split};

pub const SIDE: usize = 32;
pub const PIXELS: usize = SIDE * SIDE * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Ten,
    Hundred,
}

impl CifarVariant {
    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Ten => 10,
            CifarVariant::Hundred => 100,
        }
    }

    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Ten => 1,
            CifarVariant::Hundred => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn name(self) -> &'static str {
        match self {
            CifarVariant::Ten => "cifar10",
            CifarVariant::Hundred => "cifar100",
        }
    }

    pub fn train_files(self) -> &'static [&'static str] {
        match self {
            CifarVariant::Ten => &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarVariant::Hundred => &["train.bin"],
        }
    }

    pub fn test_files(self) -> &'static [&'static str] {
        match self {
            CifarVariant::Ten => &["test_batch.bin"],
            CifarVariant::Hundred => &["test.bin"],
        }
    }
}

/// Parses whole records into interleaved `(n, 32, 32, 3)` pixels and labels.
/// CIFAR-100 keeps the fine label (second byte).
pub fn parse_cifar<T: Element>(bytes: &[u8], variant: CifarVariant) -> Result<(Tensor4<T>, Vec<usize>)> {
    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        let whole = bytes.len() / rec * rec;
        return Err(Error::corrupt(
            whole as u64,
            format!("{} bytes is not a whole number of {rec}-byte records", bytes.len()),
        ));
    }
    let n = bytes.len() / rec;
    let scale: Vec<T> = (0..=255u32).map(|b| T::from_f64(b as f64 / 255.0)).collect();
    let mut images = Tensor4::zeros([n, SIDE, SIDE, 3])?;
    let mut labels = Vec::with_capacity(n);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[variant.label_bytes() - 1] as usize;
        if label >= variant.classes() {
            return Err(Error::corrupt(
                (i * rec + variant.label_bytes() - 1) as u64,
                format!("label {label} out of range"),
            ));
        }
        labels.push(label);
        let px = &r[variant.label_bytes()..];
        let dst = images.sample_mut(i);
        for p in 0..SIDE * SIDE {
            for ch in 0..3 {
                dst[p * 3 + ch] = scale[px[ch * SIDE * SIDE + p] as usize];
            }
        }
    }
    Ok((images, labels))
}

/// Inverse of [`parse_cifar`]. `coarse` supplies CIFAR-100 coarse labels
/// (zeros when absent).
pub fn encode_cifar<T: Element>(
    images: &Tensor4<T>,
    labels: &[usize],
    variant: CifarVariant,
    coarse: Option<&[u8]>,
) -> Result<Vec<u8>> {
    let s = images.shape();
    if [s.h, s.w, s.c] != [SIDE, SIDE, 3] || labels.len() != s.n {
        return Err(Error::shape(format!("cannot encode {s} with {} labels", labels.len())));
    }
    let mut out = Vec::with_capacity(s.n * variant.record_len());
    for (i, &label) in labels.iter().enumerate() {
        if variant == CifarVariant::Hundred {
            out.push(coarse.map_or(0, |c| c[i]));
        }
        out.push(label as u8);
        let src = images.sample(i);
        for ch in 0..3 {
            for p in 0..SIDE * SIDE {
                out.push(to_byte(src[p * 3 + ch]));
            }
        }
    }
    Ok(out)
}

fn load_files<T: Element>(dir: &Path, files: &[&str], variant: CifarVariant, split: Split) -> Result<Dataset<T>> {
    let mut bytes = Vec::new();
    for f in files {
        let path = dir.join(f);
        let chunk = fs::read(&path)?;
        if chunk.len() % variant.record_len() != 0 {
            return Err(Error::CorruptData {
                offset: (chunk.len() / variant.record_len() * variant.record_len()) as u64,
                reason: format!("{}: size {} is not a multiple of {}", path.display(), chunk.len(), variant.record_len()),
            });
        }
        bytes.extend_from_slice(&chunk);
    }
    let (images, labels) = parse_cifar(&bytes, variant)?;
    Dataset::new(variant.name(), split, variant.classes(), images, labels)
}

pub fn load_cifar<T: Element>(dir: &Path, variant: CifarVariant) -> Result<DatasetPair<T>> {
    Ok(DatasetPair {
        train: load_files(dir, variant.train_files(), variant, Split::Train)?,
        test: load_files(dir, variant.test_files(), variant, Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &[u8], seed: u8) -> Vec<u8> {
        let mut r = label.to_vec();
        r.extend((0..PIXELS).map(|i| (i as u8).wrapping_mul(seed)));
        r
    }

    #[test]
    fn planar_to_interleaved() {
        let mut bytes = record(&[7], 1);
        bytes[1] = 10;
        bytes[1 + 1024] = 20;
        bytes[1 + 2048] = 30;
        let (img, labels) = parse_cifar::<f64>(&bytes, CifarVariant::Ten).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(img.dims(), [1, 32, 32, 3]);
        assert_eq!(&img.data()[..3], &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let bytes = record(&[3, 87], 5);
        let (_, labels) = parse_cifar::<f32>(&bytes, CifarVariant::Hundred).unwrap();
        assert_eq!(labels, vec![87]);
        let bad = record(&[3, 100], 5);
        assert!(parse_cifar::<f32>(&bad, CifarVariant::Hundred).is_err());
    }

    #[test]
    fn wrong_size_is_corrupt() {
        let mut bytes = record(&[1], 3);
        bytes.extend(record(&[2], 3));
        bytes.pop();
        let err = parse_cifar::<f32>(&bytes, CifarVariant::Ten).unwrap_err();
        assert!(matches!(err, Error::CorruptData { offset: 3073, .. }), "{err}");
    }

    #[test]
    fn encode_round_trip() {
        let mut bytes = record(&[4, 9], 3);
        bytes.extend(record(&[1, 55], 7));
        let (img, labels) = parse_cifar::<f32>(&bytes, CifarVariant::Hundred).unwrap();
        let back = encode_cifar(&img, &labels, CifarVariant::Hundred, Some(&[4, 1])).unwrap();
        assert_eq!(back, bytes);
    }
}

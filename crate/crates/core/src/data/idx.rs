//! IDX containers (big-endian, unsigned-byte payloads) and the MNIST layout.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4};

use super::{Dataset, DatasetPair, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Zero border added on every side of a 28x28 digit.
pub const MNIST_PAD: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX buffer and checks its magic number.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::corrupt(bytes.len() as u64, "truncated IDX magic"));
    }
    let magic = be_u32(bytes, 0);
    if magic != expected_magic {
        return Err(Error::corrupt(0, format!("IDX magic {magic:#010x}, expected {expected_magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::corrupt(bytes.len() as u64, "truncated IDX dimensions"));
    }
    let dims: Vec<usize> = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let body = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::corrupt(4, "IDX dimensions overflow"))?;
    let have = bytes.len() - header;
    if have < body {
        return Err(Error::corrupt(
            bytes.len() as u64,
            format!("IDX payload truncated: {have} of {body} bytes"),
        ));
    }
    if have > body {
        return Err(Error::corrupt((header + body) as u64, "trailing bytes after IDX payload"));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a file, inflating it when it starts with the gzip signature.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::corrupt(0, format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Standard MNIST file stems, without the optional `.gz` suffix.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Finds `stem` or `stem.gz` in `dir`.
pub fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Converts an `(n, 28, 28)` image array to `(n, 32, 32, 1)` in `[0, 1]`
/// with a zero border.
pub fn mnist_images<T: Element>(idx: &IdxArray, pad: usize) -> Result<Tensor4<T>> {
    let [n, h, w] = match idx.dims[..] {
        [n, h, w] => [n, h, w],
        _ => return Err(Error::corrupt(0, format!("image file has rank {}", idx.dims.len()))),
    };
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor4::zeros([n, ph, pw, 1])?;
    let scale: Vec<T> = (0..=255u32).map(|b| T::from_f64(b as f64 / 255.0)).collect();
    for i in 0..n {
        let src = &idx.data[i * h * w..(i + 1) * h * w];
        let dst = out.sample_mut(i);
        for r in 0..h {
            for c in 0..w {
                dst[(r + pad) * pw + c + pad] = scale[src[r * w + c] as usize];
            }
        }
    }
    Ok(out)
}

fn load_split<T: Element>(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset<T>> {
    let missing = |stem: &str| Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found in {}", stem, dir.display()),
    ));
    let ip = find_file(dir, images).ok_or_else(|| missing(images))?;
    let lp = find_file(dir, labels).ok_or_else(|| missing(labels))?;
    let with_path = |p: &Path, e: Error| match e {
        Error::CorruptData { offset, reason } => Error::CorruptData {
            offset,
            reason: format!("{}: {reason}", p.display()),
        },
        other => other,
    };
    let img = parse_idx(&read_maybe_gz(&ip)?, IMAGES_MAGIC).map_err(|e| with_path(&ip, e))?;
    let lab = parse_idx(&read_maybe_gz(&lp)?, LABELS_MAGIC).map_err(|e| with_path(&lp, e))?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::corrupt(
            4,
            format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        ));
    }
    if let Some(pos) = lab.data.iter().position(|&l| l >= 10) {
        return Err(Error::corrupt(8 + pos as u64, format!("label {} out of range", lab.data[pos])));
    }
    Dataset::new(
        "mnist",
        split,
        10,
        mnist_images(&img, MNIST_PAD)?,
        lab.data.iter().map(|&l| l as usize).collect(),
    )
}

/// Loads both MNIST splits, padded to 32x32.
pub fn load_mnist<T: Element>(dir: &Path) -> Result<DatasetPair<T>> {
    Ok(DatasetPair {
        train: load_split(dir, MNIST_FILES[0], MNIST_FILES[1], Split::Train)?,
        test: load_split(dir, MNIST_FILES[2], MNIST_FILES[3], Split::Test)?,
    })
}

/// Re-encodes a padded MNIST split to its two IDX files.
pub fn encode_mnist<T: Element>(ds: &Dataset<T>, pad: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let s = ds.images.shape();
    if s.c != 1 || s.h <= 2 * pad || s.w <= 2 * pad {
        return Err(Error::shape(format!("not a padded single-channel split: {s}")));
    }
    let (h, w) = (s.h - 2 * pad, s.w - 2 * pad);
    let mut data = Vec::with_capacity(s.n * h * w);
    for i in 0..s.n {
        let src = ds.images.sample(i);
        for r in 0..h {
            for c in 0..w {
                data.push(to_byte(src[(r + pad) * s.w + c + pad]));
            }
        }
    }
    let labels: Vec<u8> = ds.labels.iter().map(|&l| l as u8).collect();
    Ok((
        encode_idx(IMAGES_MAGIC, &[s.n, h, w], &data),
        encode_idx(LABELS_MAGIC, &[s.n], &labels),
    ))
}

pub(crate) fn to_byte<T: Element>(v: T) -> u8 {
    (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8
}

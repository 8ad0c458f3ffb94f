//! Size and checksum pins for the standard distribution files.

use std::fs;
use std::path::Path;

use md5::{Digest, Md5};

use crate::error::Result;
use crate::model::DatasetKind;

use super::{idx, resolve_dir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pin {
    pub file: &'static str,
    /// Size of the uncompressed file.
    pub raw_size: u64,
    /// MD5 of the gzipped distribution file, when the dataset ships gzipped.
    pub gz_md5: Option<&'static str>,
}

const MNIST: [Pin; 4] = [
    Pin {
        file: "train-images-idx3-ubyte",
        raw_size: 47_040_016,
        gz_md5: Some("f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    },
    Pin {
        file: "train-labels-idx1-ubyte",
        raw_size: 60_008,
        gz_md5: Some("d53e105ee54ea40749a09fcbcd1e9432"),
    },
    Pin {
        file: "t10k-images-idx3-ubyte",
        raw_size: 7_840_016,
        gz_md5: Some("9fb629c4189551a2d022fa330f9573f3"),
    },
    Pin {
        file: "t10k-labels-idx1-ubyte",
        raw_size: 10_008,
        gz_md5: Some("ec29112dd5afa0611ce80d1b7f02629c"),
    },
];

const CIFAR10: [Pin; 6] = [
    Pin { file: "data_batch_1.bin", raw_size: 30_730_000, gz_md5: None },
    Pin { file: "data_batch_2.bin", raw_size: 30_730_000, gz_md5: None },
    Pin { file: "data_batch_3.bin", raw_size: 30_730_000, gz_md5: None },
    Pin { file: "data_batch_4.bin", raw_size: 30_730_000, gz_md5: None },
    Pin { file: "data_batch_5.bin", raw_size: 30_730_000, gz_md5: None },
    Pin { file: "test_batch.bin", raw_size: 30_730_000, gz_md5: None },
];

const CIFAR100: [Pin; 2] = [
    Pin { file: "train.bin", raw_size: 153_700_000, gz_md5: None },
    Pin { file: "test.bin", raw_size: 30_740_000, gz_md5: None },
];

pub fn pins(kind: DatasetKind) -> &'static [Pin] {
    match kind {
        DatasetKind::Mnist => &MNIST,
        DatasetKind::Cifar10 => &CIFAR10,
        DatasetKind::Cifar100 => &CIFAR100,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileStatus {
    Ok,
    Missing,
    WrongSize { expected: u64, actual: u64 },
    WrongChecksum { expected: &'static str, actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileReport {
    pub file: String,
    pub status: FileStatus,
}

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks every pinned file of `kind` under `path`. Gzipped MNIST files are
/// checked against the distribution MD5, raw files by size.
pub fn verify_dir(kind: DatasetKind, path: &Path) -> Result<Vec<FileReport>> {
    let dir = resolve_dir(path, kind).unwrap_or_else(|| path.join(kind.dir_name()));
    let mut out = Vec::new();
    for pin in pins(kind) {
        let raw = dir.join(pin.file);
        let gz = dir.join(format!("{}.gz", pin.file));
        let status = if raw.is_file() {
            let actual = fs::metadata(&raw)?.len();
            if actual == pin.raw_size {
                FileStatus::Ok
            } else {
                FileStatus::WrongSize {
                    expected: pin.raw_size,
                    actual,
                }
            }
        } else if gz.is_file() {
            let bytes = fs::read(&gz)?;
            match pin.gz_md5 {
                Some(want) if md5_hex(&bytes) != want => FileStatus::WrongChecksum {
                    expected: want,
                    actual: md5_hex(&bytes),
                },
                _ => {
                    let inflated = idx::read_maybe_gz(&gz)?;
                    if inflated.len() as u64 == pin.raw_size {
                        FileStatus::Ok
                    } else {
                        FileStatus::WrongSize {
                            expected: pin.raw_size,
                            actual: inflated.len() as u64,
                        }
                    }
                }
            }
        } else {
            FileStatus::Missing
        };
        out.push(FileReport {
            file: pin.file.to_string(),
            status,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md5_known_vector() {
        assert_eq!(md5_hex(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn sizes_match_record_arithmetic() {
        assert_eq!(MNIST[0].raw_size, 16 + 60_000 * 784);
        assert_eq!(MNIST[3].raw_size, 8 + 10_000);
        assert_eq!(CIFAR10[0].raw_size, 10_000 * 3073);
        assert_eq!(CIFAR100[0].raw_size, 50_000 * 3074);
    }

    #[test]
    fn reports_missing_and_wrong_size() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("test.bin"), [0u8; 10]).unwrap();
        let r = verify_dir(DatasetKind::Cifar100, dir.path()).unwrap();
        assert_eq!(r[0].status, FileStatus::Missing);
        assert_eq!(
            r[1].status,
            FileStatus::WrongSize {
                expected: 30_740_000,
                actual: 10
            }
        );
    }
}

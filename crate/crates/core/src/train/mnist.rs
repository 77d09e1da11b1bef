//! MNIST in the raw IDX format.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn expected_len(self) -> usize {
        match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        }
    }

    fn files(self) -> (IdxFile, IdxFile) {
        match self {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
            Split::Test => (TEST_IMAGES, TEST_LABELS),
        }
    }
}

/// An expected dataset file and its SHA-256.
#[derive(Debug, Clone, Copy)]
pub struct IdxFile {
    pub name: &'static str,
    pub sha256: &'static str,
}

pub const TRAIN_IMAGES: IdxFile = IdxFile {
    name: "train-images-idx3-ubyte",
    sha256: "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
};
pub const TRAIN_LABELS: IdxFile = IdxFile {
    name: "train-labels-idx1-ubyte",
    sha256: "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
};
pub const TEST_IMAGES: IdxFile = IdxFile {
    name: "t10k-images-idx3-ubyte",
    sha256: "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
};
pub const TEST_LABELS: IdxFile = IdxFile {
    name: "t10k-labels-idx1-ubyte",
    sha256: "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
};

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads `file` from `dir` and checks its digest.
fn read_verified(dir: &Path, file: IdxFile) -> Result<(PathBuf, Vec<u8>)> {
    let path = dir.join(file.name);
    let bytes = std::fs::read(&path).map_err(|e| {
        ingestion(
            &path,
            format!("{e}; place the uncompressed MNIST IDX files in {} (see scripts/fetch_mnist.sh)", dir.display()),
        )
    })?;
    let found = hex::encode(Sha256::digest(&bytes));
    if found != file.sha256 {
        return Err(ingestion(
            &path,
            format!("checksum mismatch: expected sha256 {}, found {found} ({} bytes)", file.sha256, bytes.len()),
        ));
    }
    Ok((path, bytes))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX3 image file into `[0, 1]` pixels.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<ImageBatch> {
    if bytes.len() < 16 || be_u32(bytes, 0) != 0x0803 {
        return Err(ingestion(path, "not an IDX3 unsigned-byte file"));
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(ingestion(
            path,
            format!("header promises {n}x{rows}x{cols} pixels, file has {}", body.len()),
        ));
    }
    ImageBatch::from_u8(n, rows, cols, 1, body)
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 || be_u32(bytes, 0) != 0x0801 {
        return Err(ingestion(path, "not an IDX1 unsigned-byte file"));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() - 8 != n {
        return Err(ingestion(path, format!("header promises {n} labels, file has {}", bytes.len() - 8)));
    }
    Ok(bytes[8..].to_vec())
}

/// Loads one MNIST split in file order. Only `"mnist"` is known.
pub fn load_dataset(name: &str, split: Split, dir: &Path) -> Result<ImageBatch> {
    if !name.eq_ignore_ascii_case("mnist") {
        return Err(ingestion(dir, format!("unknown dataset {name:?}")));
    }
    let (images, _) = split.files();
    let (path, bytes) = read_verified(dir, images)?;
    let batch = parse_idx_images(&path, &bytes)?;
    if batch.batch() != split.expected_len() || (batch.height(), batch.width()) != (28, 28) {
        return Err(ingestion(&path, format!("unexpected MNIST shape {:?}", batch.shape())));
    }
    Ok(batch)
}

pub fn load_labels(split: Split, dir: &Path) -> Result<Vec<u8>> {
    let (_, labels) = split.files();
    let (path, bytes) = read_verified(dir, labels)?;
    parse_idx_labels(&path, &bytes)
}

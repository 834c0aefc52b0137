use std::path::Path;

use super::{DataError, Dataset, Split};
use crate::linalg::Mat;
use crate::real::Real;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// `(train images, train labels, test images, test labels)` file names.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an unsigned-byte IDX file whose magic must equal `expected`.
pub fn parse_idx(bytes: &[u8], expected: u32) -> Result<(IdxHeader, &[u8]), DataError> {
    let magic = be_u32(bytes, 0).ok_or(DataError::TruncatedPayload {
        expected: 4,
        got: bytes.len(),
    })?;
    if magic != expected {
        return Err(DataError::UnrecognizedMagic { found: magic, expected });
    }
    let ndims = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndims;
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i))
        .collect::<Option<Vec<_>>>()
        .ok_or(DataError::TruncatedPayload {
            expected: header_len,
            got: bytes.len(),
        })?;
    let header = IdxHeader { magic, dims };
    let payload = &bytes[header_len..];
    if payload.len() != header.payload_len() {
        return Err(DataError::TruncatedPayload {
            expected: header.payload_len(),
            got: payload.len(),
        });
    }
    Ok((header, payload))
}

/// Serializes an unsigned-byte IDX file. The number of dimensions is taken
/// from the low byte of `magic`.
pub fn encode_idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Loads an image/label file pair. Images are flattened row-major and scaled
/// to `[0, 1]`; the class count is `max label + 1`, at least 10.
pub fn load_idx<T: Real>(
    images_path: &Path,
    labels_path: &Path,
    split: Split,
) -> Result<Dataset<T>, DataError> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    let (ih, pixels) = parse_idx(&image_bytes, IDX_IMAGES_MAGIC)?;
    let (lh, labels) = parse_idx(&label_bytes, IDX_LABELS_MAGIC)?;

    let n = ih.dims[0] as usize;
    let d = (ih.dims[1] * ih.dims[2]) as usize;
    if n != lh.dims[0] as usize {
        return Err(DataError::CountMismatch {
            images: n,
            labels: lh.dims[0] as usize,
        });
    }

    let x = Mat::from_fn(d, n, |i, j| T::lit(pixels[j * d + i] as f64) / T::lit(255.0));
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(x, labels, num_classes, split)
}

/// Loads the standard MNIST file set from `dir`: `(train, test)`.
pub fn load_mnist<T: Real>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let [tri, trl, tei, tel] = MNIST_FILES.map(|f| dir.join(f));
    let train = load_idx(&tri, &trl, Split::Train)?;
    let test = load_idx(&tei, &tel, Split::Test)?;
    Ok((train, test))
}

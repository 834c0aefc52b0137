//! Datasets: MNIST IDX ingestion, synthetic Gaussian blobs, train/val
//! splitting, and the metrics CSV.

mod blobs;
mod idx;
mod metrics;

pub use blobs::gen_blobs;
pub use idx::{
    encode_idx, load_idx, load_mnist, parse_idx, IdxHeader, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
    MNIST_FILES,
};
pub use metrics::{read_metrics, write_metrics, METRICS_HEADER};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Mat;
use crate::real::Real;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unrecognized IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    UnrecognizedMagic { found: u32, expected: u32 },
    #[error("truncated IDX payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("metrics csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which part of an experiment a dataset plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Samples stored column-wise: `x` is `d × N`, `labels[j]` belongs to
/// column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f64> {
    pub x: Mat<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: Mat<T>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self, DataError> {
        if x.cols() != labels.len() {
            return Err(DataError::CountMismatch {
                images: x.cols(),
                labels: labels.len(),
            });
        }
        if let Some((j, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {y} at sample {j} is out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            x,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], split: Split) -> Self {
        Self {
            x: self.x.select_columns(indices),
            labels: indices.iter().map(|&j| self.labels[j]).collect(),
            num_classes: self.num_classes,
            split,
        }
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            x: self.x.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// Seeded split: shuffle the indices, the last `val_size` go to validation.
/// Both parts keep the original sample order.
pub fn split_train_val<T: Real>(
    full: &Dataset<T>,
    val_size: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let n = full.len();
    if val_size >= n {
        return Err(DataError::Invalid(format!(
            "val_size {val_size} must be smaller than the dataset ({n} samples)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, val_idx) = idx.split_at_mut(n - val_size);
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((full.select(train_idx, Split::Train), full.select(val_idx, Split::Val)))
}

//! CIFAR-10/100 binary batches: fixed-size records of label byte(s)
//! followed by 3072 channel-major pixels of a 32×32 RGB image.

use std::path::Path;

use super::idx::read_maybe_gz;
use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarKind {
    /// One label byte per record.
    Cifar10,
    /// Coarse then fine label byte; the fine label is used.
    Cifar100,
}

impl CifarKind {
    fn record(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1 + PIXELS,
            CifarKind::Cifar100 => 2 + PIXELS,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }
}

pub(crate) fn parse_cifar(bytes: &[u8], kind: CifarKind, path: &Path, images: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    let record = kind.record();
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::RecordLength {
            path: path.to_path_buf(),
            len: bytes.len(),
            record,
        });
    }
    for rec in bytes.chunks_exact(record) {
        let label = rec[record - PIXELS - 1] as usize;
        if label >= kind.classes() {
            return Err(Error::Label {
                label,
                classes: kind.classes(),
            });
        }
        labels.push(label);
        images.extend(rec[record - PIXELS..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(())
}

/// Concatenates the given batch files into one dataset.
pub fn load_cifar_bin<P: AsRef<Path>>(paths: &[P], kind: CifarKind) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Dataset("no CIFAR batch files given".into()));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        parse_cifar(&read_maybe_gz(p)?, kind, p, &mut images, &mut labels)?;
    }
    let n = labels.len();
    let name = match kind {
        CifarKind::Cifar10 => "cifar10",
        CifarKind::Cifar100 => "cifar100",
    };
    Dataset::new(Tensor::new([n, 3, 32, 32], images)?, labels, kind.classes(), name)
}

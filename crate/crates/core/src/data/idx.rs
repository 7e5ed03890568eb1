//! MNIST IDX files (big-endian, magic 2051 for images and 2049 for labels),
//! read transparently from gzip when the file starts with the gzip magic.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends at byte {}", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let end = offset.checked_add(len).ok_or_else(|| Error::Dataset("IDX dimensions overflow".into()))?;
    if bytes.len() < end {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("expected {end} bytes, found {}", bytes.len()),
        });
    }
    if bytes.len() > end {
        return Err(Error::Dataset(format!(
            "{}: {} unexpected trailing bytes",
            path.display(),
            bytes.len() - end
        )));
    }
    Ok(&bytes[offset..end])
}

/// Parses already-decompressed IDX bytes. The paths only label errors.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8], images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    check_magic(images, IMAGES_MAGIC, images_path)?;
    check_magic(labels, LABELS_MAGIC, labels_path)?;
    let n = be_u32(images, 4, images_path)? as usize;
    let rows = be_u32(images, 8, images_path)? as usize;
    let cols = be_u32(images, 12, images_path)? as usize;
    let nl = be_u32(labels, 4, labels_path)? as usize;
    let pixels = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Dataset("IDX dimensions overflow".into()))?;
    let pix = payload(images, 16, pixels, images_path)?;
    let lab = payload(labels, 8, nl, labels_path)?;
    if n != nl {
        return Err(Error::CountMismatch { images: n, labels: nl });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Dataset("IDX file holds no images".into()));
    }
    if let Some(&bad) = lab.iter().find(|&&l| l > 9) {
        return Err(Error::Label {
            label: bad as usize,
            classes: 10,
        });
    }
    let data = pix.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        Tensor::new([n, 1, rows, cols], data)?,
        lab.iter().map(|&l| l as usize).collect(),
        10,
        "mnist",
    )
}

/// Loads an image/label IDX pair; either file may be gzip-compressed.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    parse_mnist_idx(&read_maybe_gz(ip)?, &read_maybe_gz(lp)?, ip, lp)
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Dataset(format!("{} not found in {}", stem, dir.display())))
}

/// Loads `{prefix}-images-idx3-ubyte[.gz]` and the matching labels from
/// `dir`, where `prefix` is `train` or `t10k`.
pub fn load_mnist_dir(dir: impl AsRef<Path>, prefix: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let images = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    load_mnist_idx(images, labels)
}

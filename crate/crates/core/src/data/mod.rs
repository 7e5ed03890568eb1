//! Datasets: MNIST IDX and CIFAR binary loaders, stratified subsets, and
//! synthetic Gaussian blobs.
//!
//! Pixels are scaled by 1/255 with no further standardization, so budgets
//! such as ε = 0.1 or 8/255 refer directly to raw intensity.

mod cifar;
mod idx;

pub use cifar::{load_cifar_bin, CifarKind};
pub use idx::{load_mnist_dir, load_mnist_idx, parse_mnist_idx};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Images `(n, c, h, w)` in `[0, 1]` with labels in `[0, classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dataset(format!("images must be (n, c, h, w), got {:?}", images.shape())));
        }
        if images.batch() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `(c, h, w)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, converted to `T`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let x = self.images.select_batch(indices)?.cast();
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// A new dataset of the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Dataset("selection is empty".into()));
        }
        let (images, labels) = self.batch::<f64>(indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            name: name.into(),
        })
    }

    /// Splits off the last `fraction` of examples as a second dataset.
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Argument(format!("split fraction {fraction} not in (0, 1)")));
        }
        let tail = ((self.len() as f64) * fraction).round() as usize;
        if tail == 0 || tail >= self.len() {
            return Err(Error::Dataset(format!(
                "cannot split {} examples at fraction {fraction}",
                self.len()
            )));
        }
        let cut = self.len() - tail;
        let head: Vec<usize> = (0..cut).collect();
        let rest: Vec<usize> = (cut..self.len()).collect();
        Ok((
            self.select(&head, format!("{}-train", self.name))?,
            self.select(&rest, format!("{}-val", self.name))?,
        ))
    }
}

/// Indices of a class-balanced sample of `n` examples, shuffled by `seed`.
///
/// Every class gets `⌊n/classes⌋` or one more. If a class runs short, the
/// shortfall is spread over the classes that still have examples.
pub fn subset_indices(labels: &[usize], classes: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > labels.len() {
        return Err(Error::Dataset(format!(
            "subset of {n} requested from {} examples",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label { label: l, classes });
        }
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let mut quota = vec![0usize; classes];
    let mut remaining = n;
    // Round-robin in a seeded class order so the ±1 remainder is unbiased.
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);
    while remaining > 0 {
        let mut progressed = false;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let mut picked: Vec<usize> = by_class
        .iter()
        .zip(&quota)
        .flat_map(|(idx, &q)| idx[..q].iter().copied())
        .collect();
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Stratified random subset of `n` examples.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let idx = subset_indices(ds.labels(), ds.classes(), n, seed)?;
    ds.select(&idx, format!("{}-subset{n}", ds.name()))
}

/// Gaussian blobs in `[0, 1]^dim`, stored as `(n, 1, 1, dim)`.
///
/// Class `c` is centred where coordinate `i` is 0.75 if bit `i mod b` of
/// `c` is set and 0.25 otherwise, `b` being the bits needed for `classes`.
/// Labels cycle through the classes, so counts differ by at most one.
pub fn synthetic_blobs(n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    synthetic_blobs_with(n, dim, classes, 0.05, seed)
}

pub fn synthetic_blobs_with(n: usize, dim: usize, classes: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dataset("synthetic dataset must be non-empty".into()));
    }
    if dim < 2 || classes < 2 {
        return Err(Error::Argument("synthetic blobs need dim >= 2 and classes >= 2".into()));
    }
    let bits = usize::BITS - (classes - 1).leading_zeros();
    if bits as usize > dim {
        return Err(Error::Argument(format!("{classes} classes do not fit in {dim} dimensions")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let bit = (c >> (j % bits as usize)) & 1;
            let centre = if bit == 1 { 0.75 } else { 0.25 };
            data.push((centre + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new([n, 1, 1, dim], data)?, labels, classes, "blobs")
}

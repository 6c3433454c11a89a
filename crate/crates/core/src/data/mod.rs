//! Labeled image datasets: MNIST and CIFAR-10 readers, a synthetic
//! generator, and seeded batch iteration.

mod batch;
mod cifar;
mod mnist;
mod synthetic;

pub use batch::{batch_indices, batches, epoch_permutation, BatchPlan, Batches};
pub use cifar::{load_cifar10, load_cifar10_dir, write_cifar10, CIFAR_RECORD_LEN};
pub use mnist::{load_mnist_dir, load_mnist_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use synthetic::synthetic_blobs;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 10;

/// Images `(count, channels, height, width)` in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.ndim() != 4 || images.dim(0) != labels.len() {
            return Err(shape_err(
                "dataset",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images and labels at the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.gather_outer(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// The first `count` samples (or all, if fewer).
    pub fn take(&self, count: usize) -> Result<Self> {
        let count = count.min(self.len());
        Self::new(self.images.slice_outer(0, count)?, self.labels[..count].to_vec())
    }
}

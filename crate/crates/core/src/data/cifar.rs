//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;

pub fn load_cifar10(paths: &[PathBuf]) -> Result<LabeledDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Format {
                path: path.clone(),
                detail: format!(
                    "length {} is not a positive multiple of {CIFAR_RECORD_LEN}",
                    bytes.len()
                ),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            if record[0] > 9 {
                return Err(Error::Format {
                    path: path.clone(),
                    detail: format!("label byte {} > 9", record[0]),
                });
            }
            labels.push(usize::from(record[0]));
            pixels.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Config("no CIFAR-10 batch files given".into()));
    }
    LabeledDataset::new(Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?, labels)
}

/// `data_batch_{1..5}.bin` or `test_batch.bin` under `dir` (or under
/// `dir/cifar-10-batches-bin`).
pub fn load_cifar10_dir(dir: &Path, train: bool) -> Result<LabeledDataset> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let files: Vec<PathBuf> = if train {
        (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![root.join("test_batch.bin")]
    };
    load_cifar10(&files)
}

/// Writes a dataset of 3x32x32 images back out as one binary batch, with
/// pixels rounded to bytes.
pub fn write_cifar10(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    if dataset.image_shape() != [3, 32, 32] {
        return Err(Error::Config(format!(
            "CIFAR-10 records need 3x32x32 images, got {:?}",
            dataset.image_shape()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_LEN);
    for (img, &label) in dataset.images().data().chunks(PIXELS).zip(dataset.labels()) {
        out.push(label as u8);
        out.extend(img.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, out)?;
    Ok(())
}

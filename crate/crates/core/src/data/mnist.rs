//! Big-endian IDX files as distributed for MNIST.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn header(bytes: &[u8], path: &Path, fields: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * fields {
        return Err(format_err(path, format!("file shorter than {}-byte header", 4 * fields)));
    }
    Ok(bytes[..4 * fields]
        .chunks_exact(4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn read_images(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let h = header(&bytes, path, 4)?;
    if h[0] != IMAGE_MAGIC {
        return Err(format_err(path, format!("bad image magic {:#010x}", h[0])));
    }
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!(
                "header promises {count}x{rows}x{cols} = {expected} pixels, payload has {}",
                payload.len()
            ),
        ));
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(format_err(path, "empty image set"));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![count, 1, rows, cols], data)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let h = header(&bytes, path, 2)?;
    if h[0] != LABEL_MAGIC {
        return Err(format_err(path, format!("bad label magic {:#010x}", h[0])));
    }
    let count = h[1] as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(format_err(
            path,
            format!("header promises {count} labels, payload has {}", payload.len()),
        ));
    }
    if let Some(bad) = payload.iter().find(|&&b| b > 9) {
        return Err(format_err(path, format!("label {bad} outside 0..10")));
    }
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let imgs = read_images(images)?;
    let lbls = read_labels(labels)?;
    if imgs.dim(0) != lbls.len() {
        return Err(format_err(
            labels,
            format!(
                "{} labels for {} images in {}",
                lbls.len(),
                imgs.dim(0),
                images.display()
            ),
        ));
    }
    LabeledDataset::new(imgs, lbls)
}

/// Loads `train-*` or `t10k-*` files from a directory.
pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<LabeledDataset> {
    let prefix = if train { "train" } else { "t10k" };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, pixels: &[u8], labels: &[u8], rows: u32, cols: u32) {
        let count = labels.len() as u32;
        let mut img = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(pixels);
        fs::write(dir.join("img"), img).unwrap();
        let mut lab = Vec::new();
        for v in [LABEL_MAGIC, count] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend_from_slice(labels);
        fs::write(dir.join("lab"), lab).unwrap();
    }

    #[test]
    fn scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), &[0, 255, 51, 102], &[3, 9], 1, 2);
        let ds = load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_shape(), [1, 1, 2]);
        assert_eq!(ds.images().data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 9]);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), &[0; 4], &[1, 2], 2, 1);
        let mut bytes = fs::read(dir.path().join("img")).unwrap();
        bytes[3] = 0x01;
        fs::write(dir.path().join("img"), bytes).unwrap();
        let err = load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), &[0; 3], &[1, 2], 2, 1);
        assert!(load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab")).is_err());
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), &[0; 4], &[1, 2], 2, 1);
        let mut lab = Vec::new();
        for v in [LABEL_MAGIC, 3] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend_from_slice(&[1, 2, 3]);
        fs::write(dir.path().join("lab"), lab).unwrap();
        assert!(load_mnist_idx(&dir.path().join("img"), &dir.path().join("lab")).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class-conditional Gaussian bumps on a noisy background.
///
/// Class `c` puts a bump at angle `2*pi*c/classes` on a ring around the
/// image center, jittered by up to one pixel; samples are interleaved by
/// class. Values stay in `[0, 1]`.
pub fn synthetic_blobs(
    classes: usize,
    samples_per_class: usize,
    image_shape: [usize; 3],
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || classes > super::NUM_CLASSES {
        return Err(Error::Config(format!(
            "synthetic_blobs needs 2..=10 classes, got {classes}"
        )));
    }
    if samples_per_class == 0 || image_shape.contains(&0) {
        return Err(Error::Config("synthetic_blobs needs a non-empty shape".into()));
    }
    let [ch, h, w] = image_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * samples_per_class;
    let radius = 0.3 * h.min(w) as f64;
    let sigma = (h.min(w) as f64 / 8.0).max(0.75);
    let mut data = Vec::with_capacity(n * ch * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = std::f64::consts::TAU * class as f64 / classes as f64;
        let cy = (h as f64 - 1.0) / 2.0 + radius * angle.sin() + rng.gen_range(-1.0..1.0);
        let cx = (w as f64 - 1.0) / 2.0 + radius * angle.cos() + rng.gen_range(-1.0..1.0);
        let amp = rng.gen_range(0.7..1.0);
        for c in 0..ch {
            let gain = 1.0 - 0.2 * c as f64 / ch as f64;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let bump = amp * gain * (-d2 / (2.0 * sigma * sigma)).exp();
                    let noise = rng.gen_range(0.0..0.1);
                    data.push((bump + noise).clamp(0.0, 1.0));
                }
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(Tensor::new(vec![n, ch, h, w], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = synthetic_blobs(3, 4, [1, 28, 28], 9).unwrap();
        assert_eq!(a, synthetic_blobs(3, 4, [1, 28, 28], 9).unwrap());
        assert_ne!(a, synthetic_blobs(3, 4, [1, 28, 28], 10).unwrap());
    }

    #[test]
    fn counts_and_range() {
        let d = synthetic_blobs(2, 50, [3, 32, 32], 0).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.labels().iter().filter(|&&l| l == 1).count(), 50);
        assert!(synthetic_blobs(1, 5, [1, 28, 28], 0).is_err());
    }
}

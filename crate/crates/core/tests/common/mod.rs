//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsefilter_core::ops::ConvLayer;
use sparsefilter_core::pruner::CUMSUM_SLACK;
use sparsefilter_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values in `±[gap, 1]`, away from the ReLU kink and from zero weights.
pub fn random_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Six nested loops over (n, k, oy, ox, c, ky, kx).
pub fn direct_conv(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let (kh, kw) = layer.kernel_size();
    let k = layer.kernels();
    let (s, p) = (layer.stride as isize, layer.padding as isize);
    let oh = (h + 2 * layer.padding - kh) / layer.stride + 1;
    let ow = (w + 2 * layer.padding - kw) / layer.stride + 1;
    let x = input.data();
    let wt = layer.weights.data();
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.bias.data()[f];
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize * s + ky as isize - p;
                                let ix = ox as isize * s + kx as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                    * wt[((f * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * k + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, k, oh, ow], out).unwrap()
}

/// Window maximum by scanning every 2x2 block.
pub fn direct_maxpool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let x = input.data();
    Tensor::from_fn(&[n, c, h / 2, w / 2], |i| {
        let ox = i % (w / 2);
        let oy = (i / (w / 2)) % (h / 2);
        let plane = i / ((w / 2) * (h / 2));
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x[plane * h * w + (2 * oy + dy) * w + 2 * ox + dx]);
            }
        }
        m
    })
}

/// `(softmax(z) - onehot) / N`, computed with plain exponentials.
pub fn direct_softmax_grad(logits: &Tensor, labels: &[usize]) -> Tensor {
    let c = logits.dim(1);
    let n = logits.dim(0);
    let mut out = Vec::with_capacity(n * c);
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let total: f64 = row.iter().map(|z| z.exp()).sum();
        for (j, z) in row.iter().enumerate() {
            let p = z.exp() / total;
            out.push((p - if j == y { 1.0 } else { 0.0 }) / n as f64);
        }
    }
    Tensor::new(vec![n, c], out).unwrap()
}

/// Reference for global-scope selection on one flat block.
///
/// Ranks entries by `(value, position)`, then picks the longest prefix whose
/// exact partial sums all stay below the threshold; within it, frozen
/// entries and picks that would cross `min_keep` are dropped.
pub fn prefix_oracle(
    layers: &[Vec<f64>],
    active: &[Vec<bool>],
    threshold: f64,
    min_keep: usize,
) -> Vec<(usize, usize)> {
    let total: f64 = layers.iter().flatten().sum();
    let mut entries: Vec<(f64, usize, usize)> = layers
        .iter()
        .enumerate()
        .flat_map(|(l, b)| b.iter().enumerate().map(move |(k, &v)| (v / total, l, k)))
        .collect();
    entries.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut best = 0;
    for p in 1..=entries.len() {
        let sum = entries[..p].iter().fold(0.0, |s, e| s + e.0);
        if sum < threshold - CUMSUM_SLACK {
            best = p;
        } else {
            break;
        }
    }
    let mut counts: Vec<usize> = active.iter().map(|l| l.iter().filter(|&&a| a).count()).collect();
    let mut out = Vec::new();
    for &(_, l, k) in &entries[..best] {
        if active[l][k] && counts[l] > min_keep {
            counts[l] -= 1;
            out.push((l, k));
        }
    }
    out
}

/// Classification error from a confusion matrix.
pub fn confusion_error_pct(predicted: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        m[y][p] += 1;
    }
    let diag: usize = (0..classes).map(|i| m[i][i]).sum();
    let total: usize = m.iter().flatten().sum();
    100.0 * (1.0 - diag as f64 / total as f64)
}

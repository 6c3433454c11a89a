//! Kernel pseudo-norms and the sparsity regularizers built on them.
//!
//! Each conv kernel `k` of layer `l` is reduced to
//! `n_k = sum |W_k| / N_k`, where `N_k` is the layer's kernel count. The
//! concatenation of these values over all layers is the kernel norm vector
//! `N`; the ratio regularizer is `|N|_1 / |N|_2`, which is scale invariant
//! and is minimized when the norm mass sits in a single kernel.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Network;
use crate::ops::ConvLayer;
use crate::pruner::KernelMask;
use crate::tensor::Tensor;

/// Pseudo-norms of every conv kernel, in layer order then kernel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelNormVector {
    values: Vec<f64>,
    index: Vec<(usize, usize)>,
    layer_offsets: Vec<usize>,
}

impl KernelNormVector {
    /// Builds a vector from per-layer blocks.
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let mut values = Vec::new();
        let mut index = Vec::new();
        let mut layer_offsets = Vec::with_capacity(blocks.len());
        for (l, block) in blocks.into_iter().enumerate() {
            layer_offsets.push(values.len());
            for (k, v) in block.into_iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "kernel norm ({l}, {k}) = {v} is not a finite non-negative value"
                    )));
                }
                values.push(v);
                index.push((l, k));
            }
        }
        Ok(Self {
            values,
            index,
            layer_offsets,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self) -> &[(usize, usize)] {
        &self.index
    }

    pub fn layer_offsets(&self) -> &[usize] {
        &self.layer_offsets
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_offsets.len()
    }

    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.layer_offsets[l];
        let end = self
            .layer_offsets
            .get(l + 1)
            .copied()
            .unwrap_or(self.values.len());
        start..end
    }

    pub fn layer_block(&self, l: usize) -> &[f64] {
        &self.values[self.layer_range(l)]
    }

    /// Same index structure with new values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            index: self.index.clone(),
            layer_offsets: self.layer_offsets.clone(),
        }
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    #[default]
    None,
    L1,
    L2,
    Ratio,
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "ratio" => Ok(Self::Ratio),
            other => Err(Error::Config(format!("unknown regularizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for RegMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Ratio => "ratio",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RegularizerConfig {
    pub mode: RegMode,
    pub lambda: f64,
}

impl RegularizerConfig {
    pub fn new(mode: RegMode, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { mode, lambda })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// The term contributes to the loss: mode is not `none` and lambda > 0.
    pub fn is_active(&self) -> bool {
        self.mode != RegMode::None && self.lambda > 0.0
    }
}

/// `sum |W_k| / N_k` for kernel `k` of `layer`; the bias is not included.
pub fn kernel_pseudo_norm(layer: &ConvLayer, k: usize) -> f64 {
    let abs_sum: f64 = layer.kernel(k).iter().map(|w| w.abs()).sum();
    abs_sum / layer.kernels() as f64
}

pub fn build_norm_vector(net: &Network) -> Result<KernelNormVector> {
    if net.conv_count() == 0 {
        return Err(Error::Config("network has no conv layers".into()));
    }
    KernelNormVector::from_blocks(
        net.conv_layers()
            .map(|c| (0..c.kernels()).map(|k| kernel_pseudo_norm(c, k)).collect())
            .collect(),
    )
}

fn nonzero_l2(nv: &KernelNormVector) -> Result<f64> {
    let l2 = nv.l2();
    if l2 > 0.0 {
        Ok(l2)
    } else {
        Err(Error::DegenerateNetwork(
            "kernel norm vector is all zero".into(),
        ))
    }
}

/// `|N|_1 / |N|_2`, in `[1, sqrt(K)]`.
pub fn ratio_loss(nv: &KernelNormVector) -> Result<f64> {
    let l2 = nonzero_l2(nv)?;
    Ok(nv.l1() / l2)
}

/// `d(|N|_1/|N|_2)/dn_k = 1/|N|_2 - |N|_1 n_k / |N|_2^3` (all `n_k >= 0`).
pub fn ratio_loss_norm_grad(nv: &KernelNormVector) -> Result<Vec<f64>> {
    let l2 = nonzero_l2(nv)?;
    let l1 = nv.l1();
    let l2_cubed = l2 * l2 * l2;
    Ok(nv.values().iter().map(|&n| 1.0 / l2 - l1 * n / l2_cubed).collect())
}

pub fn l1_reg(nv: &KernelNormVector) -> f64 {
    nv.l1()
}

pub fn l1_norm_grad(nv: &KernelNormVector) -> Vec<f64> {
    vec![1.0; nv.len()]
}

pub fn l2_reg(nv: &KernelNormVector) -> f64 {
    nv.l2()
}

pub fn l2_norm_grad(nv: &KernelNormVector) -> Result<Vec<f64>> {
    let l2 = nonzero_l2(nv)?;
    Ok(nv.values().iter().map(|&n| n / l2).collect())
}

pub fn reg_value(nv: &KernelNormVector, mode: RegMode) -> Result<f64> {
    match mode {
        RegMode::None => Ok(0.0),
        RegMode::L1 => Ok(l1_reg(nv)),
        RegMode::L2 => Ok(l2_reg(nv)),
        RegMode::Ratio => ratio_loss(nv),
    }
}

pub fn reg_norm_grad(nv: &KernelNormVector, mode: RegMode) -> Result<Vec<f64>> {
    match mode {
        RegMode::None => Ok(vec![0.0; nv.len()]),
        RegMode::L1 => Ok(l1_norm_grad(nv)),
        RegMode::L2 => l2_norm_grad(nv),
        RegMode::Ratio => ratio_loss_norm_grad(nv),
    }
}

/// Chains per-kernel norm gradients to conv weights:
/// `dL/dW = dL/dn_k * sign(W) / N_k`, with `sign(0) = 0`. Frozen kernels
/// get exactly zero. Returns one tensor per conv layer's weights.
pub fn norm_grad_to_weights(
    net: &Network,
    nv: &KernelNormVector,
    norm_grad: &[f64],
    mask: &KernelMask,
) -> Result<Vec<Tensor>> {
    if nv.layer_count() != net.conv_count() || norm_grad.len() != nv.len() {
        return Err(Error::Config(
            "norm vector does not match the network".into(),
        ));
    }
    net.conv_layers()
        .enumerate()
        .map(|(l, conv)| {
            let kernels = conv.kernels();
            let vol = conv.kernel_volume();
            let block = &norm_grad[nv.layer_range(l)];
            if block.len() != kernels {
                return Err(Error::Config(format!(
                    "layer {l}: {} norms for {kernels} kernels",
                    block.len()
                )));
            }
            let mut g = vec![0.0; conv.weights.len()];
            for (k, &dn) in block.iter().enumerate() {
                if !mask.is_active(l, k) {
                    continue;
                }
                let coef = dn / kernels as f64;
                for (gi, &w) in g[k * vol..(k + 1) * vol].iter_mut().zip(conv.kernel(k)) {
                    *gi = if w > 0.0 {
                        coef
                    } else if w < 0.0 {
                        -coef
                    } else {
                        0.0
                    };
                }
            }
            Tensor::new(conv.weights.shape().to_vec(), g)
        })
        .collect()
}

pub fn ratio_loss_gradient(
    net: &Network,
    nv: &KernelNormVector,
    mask: &KernelMask,
) -> Result<Vec<Tensor>> {
    norm_grad_to_weights(net, nv, &ratio_loss_norm_grad(nv)?, mask)
}

/// Value of the configured regularizer and, when it is active, the
/// gradient of `lambda * value` with respect to each conv layer's weights.
pub fn regularizer_term(
    net: &Network,
    mask: &KernelMask,
    config: &RegularizerConfig,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    if !config.is_active() {
        return Ok((0.0, None));
    }
    let nv = build_norm_vector(net)?;
    let value = reg_value(&nv, config.mode)?;
    let mut grads = norm_grad_to_weights(net, &nv, &reg_norm_grad(&nv, config.mode)?, mask)?;
    for g in &mut grads {
        *g = g.scale(config.lambda);
    }
    Ok((value, Some(grads)))
}

/// `L_all = L_task + lambda * L_reg`; zero when the term is inactive.
pub fn combined_loss(task_loss: f64, reg_value: f64, config: &RegularizerConfig) -> f64 {
    if config.is_active() {
        task_loss + config.lambda * reg_value
    } else {
        task_loss
    }
}

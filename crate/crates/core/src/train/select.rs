use serde::{Deserialize, Serialize};

use super::{evaluate, EpochMetrics};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::pruner::KernelMask;
use crate::regularizer::kernel_pseudo_norm;

/// Index into `history` of the sparsest epoch whose error is within
/// `max_error_delta` points of `baseline_error`; the earliest wins ties.
pub fn select_best_tradeoff(
    history: &[EpochMetrics],
    baseline_error: f64,
    max_error_delta: f64,
) -> Result<usize> {
    let budget = baseline_error + max_error_delta;
    let mut best: Option<usize> = None;
    for (i, m) in history.iter().enumerate() {
        if m.test_error_pct > budget {
            continue;
        }
        if best.map_or(true, |b| m.total_sparsity_pct > history[b].total_sparsity_pct) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoQualifyingModel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub removed_count: usize,
    pub error_pct: f64,
}

/// Zeroes the kernels of one conv layer in ascending pseudo-norm order
/// (ties by index), evaluating after each removal. Works on a copy; the
/// first point is the unmodified network.
pub fn layer_sweep(
    net: &Network,
    mask: &KernelMask,
    layer: usize,
    test: &LabeledDataset,
) -> Result<Vec<SweepPoint>> {
    let conv = net
        .conv_layer(layer)
        .ok_or_else(|| Error::Config(format!("conv layer {layer} does not exist")))?;
    let mut order: Vec<(f64, usize)> = (0..conv.kernels())
        .map(|k| (kernel_pseudo_norm(conv, k), k))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    mask.check_against(net)?;
    let mut work = net.clone();
    let mut points = vec![SweepPoint {
        removed_count: 0,
        error_pct: evaluate(&work, test)?,
    }];
    for (i, &(_, k)) in order.iter().enumerate() {
        let c = work.conv_layer_mut(layer).expect("checked above");
        let vol = c.kernel_volume();
        c.weights.data_mut()[k * vol..(k + 1) * vol].fill(0.0);
        c.bias.data_mut()[k] = 0.0;
        points.push(SweepPoint {
            removed_count: i + 1,
            error_pct: evaluate(&work, test)?,
        });
    }
    Ok(points)
}

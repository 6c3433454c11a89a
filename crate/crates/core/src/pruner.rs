//! Epoch-end filter removal: normalize the kernel norm vector, sort it
//! ascending, and zero-and-freeze the kernels whose cumulative share of the
//! norm mass stays under the threshold.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Network;
use crate::ops::GradientStore;
use crate::regularizer::{build_norm_vector, KernelNormVector};

/// Slack on the cumulative-sum comparison. Normalized shares are decimal
/// fractions of 1 and their f64 running sum drifts by a few ulps, e.g.
/// `0.001 + 0.009 < 0.01` holds in binary even though the shares add up to
/// exactly the threshold.
pub const CUMSUM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    #[default]
    Global,
    PerLayer,
}

impl FromStr for PruneScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "per-layer" => Ok(Self::PerLayer),
            other => Err(Error::Config(format!("unknown prune scope '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub threshold: f64,
    pub scope: PruneScope,
    pub min_keep: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            scope: PruneScope::Global,
            min_keep: 1,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1), got {}",
                self.threshold
            )));
        }
        if self.min_keep == 0 {
            return Err(Error::Config("min_keep must be at least 1".into()));
        }
        Ok(())
    }
}

/// Active (`true`) / frozen (`false`) flag for every conv kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMask {
    layers: Vec<Vec<bool>>,
}

impl KernelMask {
    pub fn all_active(net: &Network) -> Self {
        Self {
            layers: net.conv_filter_counts().into_iter().map(|n| vec![true; n]).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Vec<bool>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn is_active(&self, l: usize, k: usize) -> bool {
        self.layers[l][k]
    }

    pub fn active_count(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|&&a| a).count()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        (0..self.layers.len()).map(|l| self.active_count(l)).collect()
    }

    pub fn active_indices(&self, l: usize) -> Vec<usize> {
        self.layers[l]
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }

    /// `0`/`1` rows, as stored in checkpoint manifests.
    pub fn to_bits(&self) -> Vec<Vec<u8>> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|&a| u8::from(a)).collect())
            .collect()
    }

    pub fn from_bits(bits: &[Vec<u8>]) -> Result<Self> {
        bits.iter()
            .map(|row| {
                row.iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::Checkpoint(format!("mask entry {other} is not 0/1"))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()
            .map(|layers| Self { layers })
    }

    /// Layer count and kernel counts agree with `net`, and no layer is empty.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        let counts = net.conv_filter_counts();
        if counts.len() != self.layers.len()
            || counts.iter().zip(&self.layers).any(|(&n, l)| n != l.len())
        {
            return Err(Error::Config(format!(
                "mask shape {:?} does not match conv filters {counts:?}",
                self.layers.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        if let Some(l) = (0..self.layers.len()).find(|&l| self.active_count(l) == 0) {
            return Err(Error::Config(format!("mask leaves conv layer {l} empty")));
        }
        Ok(())
    }

    /// Per-parameter element masks for the optimizer (`true` = frozen).
    pub fn frozen_elements(&self, net: &Network) -> Vec<Option<Vec<bool>>> {
        let mut out = vec![None; net.param_count()];
        for (l, ((wi, bi), conv)) in net
            .conv_param_indices()
            .into_iter()
            .zip(net.conv_layers())
            .enumerate()
        {
            if self.active_count(l) == conv.kernels() {
                continue;
            }
            let vol = conv.kernel_volume();
            let frozen: Vec<bool> = self.layers[l].iter().map(|a| !a).collect();
            out[wi] = Some(frozen.iter().flat_map(|&f| std::iter::repeat(f).take(vol)).collect());
            out[bi] = Some(frozen);
        }
        out
    }
}

/// Audit record of one pruning pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub removed: Vec<(usize, usize)>,
    pub norm_mass_removed: f64,
    pub active_counts_after: Vec<usize>,
}

/// Rescales the vector so it sums to 1 globally, or so each layer block
/// sums to 1.
pub fn normalize_norms(nv: &KernelNormVector, scope: PruneScope) -> Result<KernelNormVector> {
    let mut values = nv.values().to_vec();
    let units: Vec<std::ops::Range<usize>> = match scope {
        PruneScope::Global => vec![0..nv.len()],
        PruneScope::PerLayer => (0..nv.layer_count()).map(|l| nv.layer_range(l)).collect(),
    };
    for unit in units {
        let sum: f64 = values[unit.clone()].iter().sum();
        if !(sum > 0.0) {
            return Err(Error::DegenerateNetwork(format!(
                "kernel norms {unit:?} sum to zero"
            )));
        }
        for v in &mut values[unit] {
            *v /= sum;
        }
    }
    Ok(nv.with_values(values))
}

/// Kernels to remove, given a vector normalized for `config.scope`.
///
/// Entries are walked in ascending order (ties by `(layer, kernel)`); a
/// kernel is taken while the running sum stays strictly below the
/// threshold. Frozen kernels and picks that would leave a layer with fewer
/// than `min_keep` active kernels are skipped.
pub fn select_removals(
    normalized: &KernelNormVector,
    mask: &KernelMask,
    config: &PruneConfig,
) -> Vec<(usize, usize)> {
    let groups: Vec<Vec<usize>> = match config.scope {
        PruneScope::Global => vec![(0..normalized.len()).collect()],
        PruneScope::PerLayer => (0..normalized.layer_count())
            .map(|l| normalized.layer_range(l).collect())
            .collect(),
    };
    let values = normalized.values();
    let index = normalized.index();
    let mut active = mask.active_counts();
    let mut removed = Vec::new();
    for mut order in groups {
        // stable sort on positions already in (layer, kernel) order
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut cum = 0.0;
        for i in order {
            cum += values[i];
            if !(cum < config.threshold - CUMSUM_SLACK) {
                break;
            }
            let (l, k) = index[i];
            if !mask.is_active(l, k) || active[l] <= config.min_keep {
                continue;
            }
            active[l] -= 1;
            removed.push((l, k));
        }
    }
    removed
}

/// Zeroes the weights, bias and momentum of each removed kernel and marks it
/// frozen. Applying the same removals again changes nothing.
pub fn apply_mask(
    net: &mut Network,
    removals: &[(usize, usize)],
    mask: &mut KernelMask,
    store: Option<&mut GradientStore>,
) -> Result<()> {
    mask.check_against(net)?;
    let param_idx = net.conv_param_indices();
    for &(l, k) in removals {
        let conv = net
            .conv_layer_mut(l)
            .ok_or_else(|| Error::Config(format!("no conv layer {l}")))?;
        if k >= conv.kernels() {
            return Err(Error::Config(format!("no kernel {k} in conv layer {l}")));
        }
        let vol = conv.kernel_volume();
        conv.weights.data_mut()[k * vol..(k + 1) * vol].fill(0.0);
        conv.bias.data_mut()[k] = 0.0;
        mask.layers[l][k] = false;
    }
    if let Some(store) = store {
        for &(l, k) in removals {
            let (wi, bi) = param_idx[l];
            let vol = net.conv_layer(l).map(|c| c.kernel_volume()).unwrap_or(0);
            store.velocity[wi].data_mut()[k * vol..(k + 1) * vol].fill(0.0);
            store.velocity[bi].data_mut()[k] = 0.0;
        }
    }
    Ok(())
}

/// One full pruning pass: norms, normalization, selection, zero-and-freeze.
pub fn prune_epoch(
    net: &mut Network,
    mask: &mut KernelMask,
    config: &PruneConfig,
    epoch: usize,
    store: Option<&mut GradientStore>,
) -> Result<PruneEvent> {
    config.validate()?;
    let nv = build_norm_vector(net)?;
    let normalized = normalize_norms(&nv, config.scope)?;
    let removed = select_removals(&normalized, mask, config);
    let norm_mass_removed = removed
        .iter()
        .map(|&(l, k)| normalized.values()[normalized.layer_offsets()[l] + k])
        .sum();
    apply_mask(net, &removed, mask, store)?;
    Ok(PruneEvent {
        epoch,
        removed,
        norm_mass_removed,
        active_counts_after: mask.active_counts(),
    })
}

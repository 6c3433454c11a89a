//! The training loop: task loss plus regularizer, momentum SGD that skips
//! frozen kernels, and an optional pruning pass at the end of every epoch.

mod checkpoint;
mod io;
mod select;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TensorEntry, FORMAT_VERSION, MANIFEST_FILE,
    PARAMS_FILE,
};
pub use io::{read_events, read_metrics_csv, write_events, write_metrics_csv};
pub use select::{layer_sweep, select_best_tradeoff, SweepPoint};

use serde::{Deserialize, Serialize};

use crate::data::{batches, BatchPlan, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{count_active_filters, Network};
use crate::ops::{sgd_momentum_step, GradientStore};
use crate::pruner::{prune_epoch, KernelMask, PruneConfig, PruneEvent};
use crate::regularizer::{
    build_norm_vector, combined_loss, reg_value, regularizer_term, RegularizerConfig,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub reg: RegularizerConfig,
    pub prune: PruneConfig,
    pub prune_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            reg: RegularizerConfig::none(),
            prune: PruneConfig::default(),
            prune_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "need lr > 0 and 0 <= momentum < 1, got lr={} momentum={}",
                self.lr, self.momentum
            )));
        }
        RegularizerConfig::new(self.reg.mode, self.reg.lambda)?;
        self.prune.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub loss_task: f64,
    pub loss_reg: f64,
    pub loss_all: f64,
    pub test_error_pct: f64,
    pub active_counts: Vec<usize>,
    pub total_sparsity_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    /// Sample-weighted mean task loss over the epoch.
    pub task: f64,
    /// Regularizer value after the epoch's last step (0 when inactive).
    pub reg: f64,
}

/// Runs one pass over `dataset` in the order fixed by `(config.seed, epoch)`.
pub fn train_epoch(
    net: &mut Network,
    store: &mut GradientStore,
    mask: &KernelMask,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochLosses> {
    if dataset.image_shape() != net.input_shape() {
        return Err(Error::Config(format!(
            "dataset images {:?} do not fit network input {:?}",
            dataset.image_shape(),
            net.input_shape()
        )));
    }
    let frozen = mask.frozen_elements(net);
    let conv_weights: Vec<usize> = net.conv_param_indices().into_iter().map(|(w, _)| w).collect();
    let plan = BatchPlan {
        seed: config.seed,
        batch_size: config.batch_size.min(dataset.len()),
        epoch,
    };
    let mut task_sum = 0.0;
    for (images, labels) in batches(dataset, &plan)? {
        let (loss, mut grads) = net.loss_and_grads(&images, &labels)?;
        task_sum += loss * labels.len() as f64;
        if let (_, Some(reg_grads)) = regularizer_term(net, mask, &config.reg)? {
            for (&pi, g) in conv_weights.iter().zip(&reg_grads) {
                grads[pi].add_assign(g)?;
            }
        }
        step(net, store, grads, &frozen, config)?;
    }
    let reg = if config.reg.is_active() {
        reg_value(&build_norm_vector(net)?, config.reg.mode)?
    } else {
        0.0
    };
    Ok(EpochLosses {
        task: task_sum / dataset.len() as f64,
        reg,
    })
}

fn step(
    net: &mut Network,
    store: &mut GradientStore,
    grads: Vec<Tensor>,
    frozen: &[Option<Vec<bool>>],
    config: &TrainConfig,
) -> Result<()> {
    for (i, (param, grad)) in net.params_mut().into_iter().zip(grads).enumerate() {
        sgd_momentum_step(
            param,
            &grad,
            &mut store.velocity[i],
            config.lr,
            config.momentum,
            frozen[i].as_deref(),
        )?;
        param.round_to_f32();
        store.velocity[i].round_to_f32();
        store.grads[i] = grad;
    }
    Ok(())
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 250;

/// Predicted class of every sample, in dataset order.
pub fn predict(net: &Network, dataset: &LabeledDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    let mut start = 0;
    while start < dataset.len() {
        let count = EVAL_BATCH.min(dataset.len() - start);
        let logits = net.forward(&dataset.images().slice_outer(start, count)?)?;
        let classes = logits.dim(1);
        out.extend(logits.data().chunks(classes).map(argmax));
        start += count;
    }
    Ok(out)
}

/// Classification error in percent.
pub fn evaluate(net: &Network, dataset: &LabeledDataset) -> Result<f64> {
    let wrong = predict(net, dataset)?
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p != l)
        .count();
    Ok(100.0 * wrong as f64 / dataset.len() as f64)
}

/// Network, mask, optimizer state and the run's history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: Network,
    pub mask: KernelMask,
    pub store: GradientStore,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    pub events: Vec<PruneEvent>,
}

impl Trainer {
    pub fn new(network: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mask = KernelMask::all_active(&network);
        let store = GradientStore::zeros_like(&network.params());
        Ok(Self {
            network,
            mask,
            store,
            config,
            history: Vec::new(),
            events: Vec::new(),
        })
    }

    /// Resumes from a checkpoint; pruning events are not stored there.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let grads = ckpt.velocity.iter().map(|v| Tensor::zeros(v.shape())).collect();
        Ok(Self {
            network: ckpt.network,
            mask: ckpt.mask,
            store: GradientStore {
                grads,
                velocity: ckpt.velocity,
            },
            config: ckpt.config,
            history: ckpt.history,
            events: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.network.clone(),
            mask: self.mask.clone(),
            velocity: self.store.velocity.clone(),
            config: self.config,
            history: self.history.clone(),
        }
    }

    /// Train, prune (if enabled), evaluate and record one epoch.
    pub fn run_epoch(
        &mut self,
        train: &LabeledDataset,
        test: &LabeledDataset,
    ) -> Result<&EpochMetrics> {
        let epoch = self.history.len() + 1;
        let losses = train_epoch(
            &mut self.network,
            &mut self.store,
            &self.mask,
            train,
            &self.config,
            epoch,
        )?;
        if self.config.prune_enabled {
            let event = prune_epoch(
                &mut self.network,
                &mut self.mask,
                &self.config.prune,
                epoch,
                Some(&mut self.store),
            )?;
            self.events.push(event);
        }
        let counts = count_active_filters(&self.network, &self.mask)?;
        self.history.push(EpochMetrics {
            epoch,
            loss_task: losses.task,
            loss_reg: losses.reg,
            loss_all: combined_loss(losses.task, losses.reg, &self.config.reg),
            test_error_pct: evaluate(&self.network, test)?,
            total_sparsity_pct: counts.total_sparsity_pct(),
            active_counts: counts.active,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs the remaining epochs up to `config.epochs`, calling `on_epoch`
    /// after each one.
    pub fn run(
        &mut self,
        train: &LabeledDataset,
        test: &LabeledDataset,
        mut on_epoch: impl FnMut(&Trainer),
    ) -> Result<()> {
        while self.history.len() < self.config.epochs {
            self.run_epoch(train, test)?;
            on_epoch(self);
        }
        Ok(())
    }
}

pub fn run_training(
    network: Network,
    config: TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(network, config)?;
    trainer.run(train, test, |_| {})?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    }
}

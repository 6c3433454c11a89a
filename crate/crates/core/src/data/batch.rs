use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub epoch: usize,
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Index lists of each batch; the final batch may be short.
pub fn batch_indices(len: usize, plan: &BatchPlan) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > len {
        return Err(Error::Config(format!(
            "batch size {} must be in 1..={len}",
            plan.batch_size
        )));
    }
    Ok(epoch_permutation(len, plan.seed, plan.epoch)
        .chunks(plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub struct Batches<'a> {
    dataset: &'a LabeledDataset,
    groups: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.groups.next()?;
        Some(self.dataset.gather(&idx).expect("indices come from a permutation"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.groups.size_hint()
    }
}

impl ExactSizeIterator for Batches<'_> {}

pub fn batches<'a>(dataset: &'a LabeledDataset, plan: &BatchPlan) -> Result<Batches<'a>> {
    Ok(Batches {
        dataset,
        groups: batch_indices(dataset.len(), plan)?.into_iter(),
    })
}

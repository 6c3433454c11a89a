//! Checkpoint directories: `manifest.json` plus `params.bin`, a blob of
//! little-endian `f32` values laid out as the manifest's tensor table says.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochMetrics, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{ArchitectureSpec, Network};
use crate::pruner::KernelMask;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub mask: KernelMask,
    /// Momentum buffers in parameter order.
    pub velocity: Vec<Tensor>,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
}

/// One row of the tensor table. `offset` and `length` are in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: ArchitectureSpec,
    config: TrainConfig,
    mask: Vec<Vec<u8>>,
    tensors: Vec<TensorEntry>,
    history: Vec<EpochMetrics>,
}

fn tensor_names(net: &Network) -> Vec<String> {
    let params = net.param_names();
    let momentum = params.iter().map(|n| format!("{n}.momentum"));
    params.iter().cloned().chain(momentum).collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.mask.check_against(&ckpt.network)?;
    let params = ckpt.network.params();
    if ckpt.velocity.len() != params.len()
        || params
            .iter()
            .zip(&ckpt.velocity)
            .any(|(p, v)| p.shape() != v.shape())
    {
        return Err(Error::Checkpoint(
            "momentum buffers do not match parameters".into(),
        ));
    }
    let tensors: Vec<&Tensor> = params.into_iter().chain(&ckpt.velocity).collect();
    let mut blob = Vec::new();
    let mut table = Vec::with_capacity(tensors.len());
    for (name, t) in tensor_names(&ckpt.network).into_iter().zip(&tensors) {
        let offset = blob.len() as u64;
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        table.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: ckpt.network.spec().clone(),
        config: ckpt.config,
        mask: ckpt.mask.to_bits(),
        tensors: table,
        history: ckpt.history.clone(),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(PARAMS_FILE), blob)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let skeleton = Network::init(manifest.architecture.clone(), 0)?;
    let names = tensor_names(&skeleton);
    let shapes: Vec<Vec<usize>> = skeleton
        .params()
        .iter()
        .map(|p| p.shape().to_vec())
        .chain(skeleton.params().iter().map(|p| p.shape().to_vec()))
        .collect();
    if manifest.tensors.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "tensor table has {} entries, architecture needs {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(names.len());
    for ((entry, name), shape) in manifest.tensors.iter().zip(&names).zip(&shapes) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} where {name} {shape:?} was expected",
                entry.name, entry.shape
            )));
        }
        let count: usize = shape.iter().product();
        if entry.offset != expected_offset || entry.length != 4 * count as u64 {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: offset {} length {} (expected {expected_offset}, {})",
                entry.offset,
                entry.length,
                4 * count
            )));
        }
        let end = (entry.offset + entry.length) as usize;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "params.bin holds {} bytes, tensor {name} ends at {end}",
                blob.len()
            )));
        }
        let data = blob[entry.offset as usize..end]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
        expected_offset = end as u64;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "params.bin has {} bytes, manifest describes {expected_offset}",
            blob.len()
        )));
    }
    let velocity = tensors.split_off(tensors.len() / 2);
    let network = Network::from_params(manifest.architecture, tensors)?;
    let mask = KernelMask::from_bits(&manifest.mask)?;
    mask.check_against(&network)?;
    Ok(Checkpoint {
        network,
        mask,
        velocity,
        config: manifest.config,
        history: manifest.history,
    })
}

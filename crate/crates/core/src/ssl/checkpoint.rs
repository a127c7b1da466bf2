//! Binary checkpoints.
//!
//! Layout: the magic `TOV1`, a little-endian `u32` header length, a JSON
//! header, then every parameter tensor in declaration order as little-endian
//! `f64`, then the optimizer's first and second moment buffers in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::AugmentSpec;
use super::model::{Grads, Model, ModelConfig};
use super::optim::OptimizerState;
use super::tensor::Tensor;
use super::train::{Progress, TrainConfig, Trainer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TOV1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    stage: u8,
    model: ModelConfig,
    train: TrainConfig,
    augment: AugmentSpec,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    frozen_mask: Vec<bool>,
    seed: u64,
    epoch: usize,
    step_in_epoch: usize,
    global_step: usize,
    optimizer_steps: u64,
    /// Loss accumulators as raw `f64` bits so they survive the round trip exactly.
    epoch_loss_sum_bits: u64,
    epoch_losses_bits: Vec<u64>,
}

pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let header = Header {
        version: FORMAT_VERSION,
        stage: t.stage,
        model: t.model.config.clone(),
        train: t.train.clone(),
        augment: t.augment.clone(),
        names: t.model.config.param_names(),
        shapes: t.model.config.param_shapes(),
        frozen_mask: t.model.encoder.frozen_mask.clone(),
        seed: t.train.seed,
        epoch: t.progress.epoch,
        step_in_epoch: t.progress.step_in_epoch,
        global_step: t.progress.global_step,
        optimizer_steps: t.optimizer.t,
        epoch_loss_sum_bits: t.progress.epoch_loss_sum.to_bits(),
        epoch_losses_bits: t.progress.epoch_losses.iter().map(|v| v.to_bits()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 24 * t.model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let values = t
        .model
        .params()
        .into_iter()
        .flat_map(|p| p.data().iter())
        .chain(t.optimizer.m.tensors.iter().flatten())
        .chain(t.optimizer.v.tensors.iter().flatten());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let bad = |msg: &str| Error::MalformedCheckpoint(msg.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing TOV1 magic"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::MalformedCheckpoint(format!("unsupported version {}", header.version)));
    }
    header.model.validate()?;
    let shapes = header.model.param_shapes();
    if header.shapes != shapes {
        return Err(bad("tensor shapes disagree with the model config"));
    }
    if header.frozen_mask.len() != header.model.blocks() + 1 {
        return Err(bad("frozen mask length disagrees with the block count"));
    }
    let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let body = &bytes[8 + len..];
    if body.len() != 3 * count * 8 {
        return Err(Error::MalformedCheckpoint(format!(
            "expected {} payload bytes, found {}",
            3 * count * 8,
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let tensors = shapes
        .iter()
        .map(|s| Tensor::new(s.clone(), take(s.iter().product())))
        .collect::<Result<Vec<_>>>()?;
    let mut buffers = || Grads {
        tensors: shapes.iter().map(|s| take(s.iter().product())).collect(),
    };
    let m = buffers();
    let v = buffers();
    let mut model = Model::from_tensors(header.model, tensors)?;
    model.encoder.frozen_mask = header.frozen_mask;
    Ok(Trainer {
        optimizer: OptimizerState {
            kind: header.train.optimizer,
            t: header.optimizer_steps,
            m,
            v,
        },
        model,
        train: header.train,
        augment: header.augment,
        stage: header.stage,
        progress: Progress {
            epoch: header.epoch,
            step_in_epoch: header.step_in_epoch,
            global_step: header.global_step,
            epoch_loss_sum: f64::from_bits(header.epoch_loss_sum_bits),
            epoch_losses: header.epoch_losses_bits.into_iter().map(f64::from_bits).collect(),
        },
    })
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    from_bytes(&std::fs::read(path)?)
}

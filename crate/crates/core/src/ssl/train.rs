//! Contrastive pretraining: the batched step, the epoch loop and the two
//! learning stages.
//!
//! Batch composition depends only on `(seed, stage, epoch)` and each sample's
//! view pair only on `(seed, stage, epoch, position)`, so a run can be stopped
//! and resumed at any step boundary and produce the same parameters bit for bit.
//! Work is split into fixed chunks whose partial gradients are summed in
//! order, so the worker count never changes results.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_pair, AugmentSpec};
use super::loss::nt_xent;
use super::model::{Grads, Model, ModelConfig, ViewCache};
use super::optim::{cosine_lr, OptimizerKind, OptimizerState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Views processed per work unit.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Zero epochs leaves the model untouched.
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.5,
            batch_size: 64,
            base_lr: 1e-3,
            epochs: 50,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveParameter { name: "tau", value: self.tau });
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::NonPositiveParameter {
                name: "base_lr",
                value: self.base_lr,
            });
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!("batch size {} < 2", self.batch_size)));
        }
        Ok(())
    }
}

/// Which encoder layers stay fixed in the second stage. Only prefixes of
/// the conv blocks can be frozen; `All` also freezes the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezeSpec {
    None,
    Prefix(usize),
    All,
}

impl FreezeSpec {
    /// Shallow and middle blocks: the first `ceil(2B/3)`.
    pub fn default_for(blocks: usize) -> Self {
        FreezeSpec::Prefix((2 * blocks).div_ceil(3))
    }

    /// From an explicit list of block indices, which must be `0..n`.
    pub fn from_blocks(indices: &[usize], blocks: usize) -> Result<Self> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.iter().enumerate().any(|(i, &b)| i != b) {
            return Err(Error::InvalidFreezeSpec(format!("{indices:?} is not a prefix of the blocks")));
        }
        if sorted.len() > blocks {
            return Err(Error::InvalidFreezeSpec(format!("block {} does not exist", sorted.len() - 1)));
        }
        Ok(if sorted.is_empty() {
            FreezeSpec::None
        } else {
            FreezeSpec::Prefix(sorted.len())
        })
    }

    /// Per-layer frozen flags: one per block then one for the embedding.
    pub fn mask(&self, blocks: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; blocks + 1];
        match *self {
            FreezeSpec::None => {}
            FreezeSpec::Prefix(n) if n <= blocks => mask[..n].fill(true),
            FreezeSpec::Prefix(n) => {
                return Err(Error::InvalidFreezeSpec(format!("prefix {n} exceeds {blocks} blocks")))
            }
            FreezeSpec::All => mask.fill(true),
        }
        Ok(mask)
    }
}

impl fmt::Display for FreezeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreezeSpec::None => f.write_str("none"),
            FreezeSpec::Prefix(n) => write!(f, "prefix:{n}"),
            FreezeSpec::All => f.write_str("all"),
        }
    }
}

/// Accepts `none`, `all`, `prefix:N` or a comma-separated block list such as `0,1`.
impl FromStr for FreezeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" | "" => return Ok(FreezeSpec::None),
            "all" => return Ok(FreezeSpec::All),
            _ => {}
        }
        if let Some(n) = s.strip_prefix("prefix:") {
            return n
                .trim()
                .parse()
                .map(FreezeSpec::Prefix)
                .map_err(|_| Error::InvalidFreezeSpec(s.to_string()));
        }
        let indices: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidFreezeSpec(s.to_string()))?;
        Self::from_blocks(&indices, usize::MAX - 1)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a tuple of integers into a seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix(h ^ p))
}

/// Loss and gradient for views ordered as pairs `(2i, 2i+1)`.
pub fn loss_and_grads(model: &Model, views: &[Tensor], tau: f64) -> Result<(f64, Grads)> {
    let caches: Vec<ViewCache> = views
        .par_iter()
        .map(|v| model.forward_view(v.data()))
        .collect::<Result<_>>()?;
    let d = model.config.proj_dim;
    let z = Tensor::new(
        vec![views.len(), d],
        caches.iter().flat_map(|c| c.z.iter().copied()).collect(),
    )?;
    let (loss, dz) = nt_xent(&z, tau)?;
    let partials: Vec<Grads> = caches
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(k, chunk)| {
            let mut g = Grads::zeros(&model.config);
            for (j, cache) in chunk.iter().enumerate() {
                model.backward_view(cache, dz.row(k * CHUNK + j), &mut g);
            }
            g
        })
        .collect();
    let mut grads = Grads::zeros(&model.config);
    for p in &partials {
        grads.add(p);
    }
    Ok((loss, grads))
}

/// One optimizer update on a batch of view pairs; returns the loss before the update.
pub fn train_step(model: &mut Model, opt: &mut OptimizerState, views: &[Tensor], tau: f64, lr: f64) -> Result<f64> {
    let (loss, grads) = loss_and_grads(model, views, tau)?;
    opt.step(model, &grads, lr);
    Ok(loss)
}

/// Position of a run inside its schedule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: usize,
    pub epoch_loss_sum: f64,
    /// Mean loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub stage: u8,
    pub progress: Progress,
}

impl Trainer {
    pub fn new(model: Model, train: TrainConfig, augment: AugmentSpec, stage: u8) -> Result<Self> {
        train.validate()?;
        augment.validate()?;
        if augment.output_side != model.config.input_side {
            return Err(Error::InvalidConfig(format!(
                "augmentation output side {} differs from model input side {}",
                augment.output_side, model.config.input_side
            )));
        }
        let optimizer = OptimizerState::new(train.optimizer, &model);
        Ok(Trainer {
            model,
            optimizer,
            train,
            augment,
            stage,
            progress: Progress::default(),
        })
    }

    pub fn steps_per_epoch(&self, corpus_len: usize) -> usize {
        corpus_len / self.train.batch_size
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch >= self.train.epochs
    }

    /// Sample order for one epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.train.seed, self.stage as u64, epoch as u64]));
        order.shuffle(&mut rng);
        order
    }

    /// Views of batch `step` in `epoch`, ordered as pairs.
    pub fn batch_views(&self, corpus: &[Tensor], order: &[usize], epoch: usize, step: usize) -> Result<Vec<Tensor>> {
        let b = self.train.batch_size;
        let pairs: Vec<(Tensor, Tensor)> = (step * b..(step + 1) * b)
            .into_par_iter()
            .map(|pos| {
                let seed = derive_seed(&[self.train.seed, self.stage as u64, epoch as u64, pos as u64, 1]);
                augment_pair(&corpus[order[pos]], &self.augment, &mut ChaCha8Rng::seed_from_u64(seed))
            })
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().flat_map(|(a, b)| [a, b]).collect())
    }

    /// Trains until the configured epochs are done or `stop_after` more
    /// steps have run. Returns whether training finished.
    pub fn run(&mut self, corpus: &[Tensor], stop_after: Option<usize>) -> Result<bool> {
        if self.is_finished() {
            return Ok(true);
        }
        if corpus.len() < self.train.batch_size {
            return Err(Error::InsufficientData {
                required: self.train.batch_size,
                available: corpus.len(),
            });
        }
        let spe = self.steps_per_epoch(corpus.len());
        let total = self.train.epochs * spe;
        let mut done = 0;
        while self.progress.epoch < self.train.epochs {
            let epoch = self.progress.epoch;
            let order = self.epoch_order(epoch, corpus.len());
            while self.progress.step_in_epoch < spe {
                if stop_after == Some(done) {
                    return Ok(false);
                }
                let views = self.batch_views(corpus, &order, epoch, self.progress.step_in_epoch)?;
                let lr = cosine_lr(self.train.base_lr, self.progress.global_step, total);
                let loss = train_step(&mut self.model, &mut self.optimizer, &views, self.train.tau, lr)?;
                self.progress.epoch_loss_sum += loss;
                self.progress.step_in_epoch += 1;
                self.progress.global_step += 1;
                done += 1;
            }
            self.progress.epoch_losses.push(self.progress.epoch_loss_sum / spe as f64);
            self.progress.epoch_loss_sum = 0.0;
            self.progress.step_in_epoch = 0;
            self.progress.epoch += 1;
        }
        Ok(true)
    }
}

/// Seed of the random initialisation used for stage 1 and the random baseline.
pub fn init_seed(train_seed: u64) -> u64 {
    derive_seed(&[train_seed, 0xA11C])
}

/// Stage 1 before any step: a random init with every layer trainable.
pub fn stage1_trainer(config: ModelConfig, train: &TrainConfig, augment: &AugmentSpec) -> Result<Trainer> {
    let model = Model::init(config, init_seed(train.seed))?;
    Trainer::new(model, train.clone(), augment.clone(), 1)
}

/// Stage 1: a randomly initialised model trained on the general corpus with every layer trainable.
pub fn train_stage1(config: ModelConfig, corpus: &[Tensor], train: &TrainConfig, augment: &AugmentSpec) -> Result<Trainer> {
    let mut trainer = stage1_trainer(config, train, augment)?;
    trainer.run(corpus, None)?;
    Ok(trainer)
}

/// Prepares stage 2 from a stage-1 model: frozen layers set, fresh optimizer state.
pub fn stage2_trainer(
    mut model: Model,
    train: &TrainConfig,
    augment: &AugmentSpec,
    freeze: FreezeSpec,
) -> Result<Trainer> {
    model.encoder.frozen_mask = freeze.mask(model.config.blocks())?;
    Trainer::new(model, train.clone(), augment.clone(), 2)
}

/// Stage 2: continues training on the specialized corpus with the frozen layers held fixed.
pub fn train_stage2(
    model: Model,
    corpus: &[Tensor],
    train: &TrainConfig,
    augment: &AugmentSpec,
    freeze: FreezeSpec,
) -> Result<Trainer> {
    let mut trainer = stage2_trainer(model, train, augment, freeze)?;
    trainer.run(corpus, None)?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            channels: vec![4, 4, 4],
            embed_dim: 8,
            head_hidden: 8,
            proj_dim: 4,
            input_side: 8,
            ..Default::default()
        }
    }

    fn corpus(n: usize, side: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Tensor::new(vec![3, side, side], (0..3 * side * side).map(|_| rng.random()).collect()).unwrap())
            .collect()
    }

    fn small_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs,
            base_lr: 1e-2,
            ..Default::default()
        }
    }

    fn aug() -> AugmentSpec {
        AugmentSpec {
            output_side: 8,
            ..Default::default()
        }
    }

    #[test]
    fn freeze_spec_parsing() {
        assert_eq!("none".parse::<FreezeSpec>().unwrap(), FreezeSpec::None);
        assert_eq!("all".parse::<FreezeSpec>().unwrap(), FreezeSpec::All);
        assert_eq!("prefix:2".parse::<FreezeSpec>().unwrap(), FreezeSpec::Prefix(2));
        assert_eq!("1,0".parse::<FreezeSpec>().unwrap(), FreezeSpec::Prefix(2));
        assert!(matches!("0,2".parse::<FreezeSpec>(), Err(Error::InvalidFreezeSpec(_))));
        assert!(matches!(FreezeSpec::Prefix(4).mask(3), Err(Error::InvalidFreezeSpec(_))));
        assert_eq!(FreezeSpec::default_for(3), FreezeSpec::Prefix(2));
        assert_eq!(FreezeSpec::All.mask(2).unwrap(), vec![true; 3]);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let t = small_train(0);
        let trained = train_stage1(cfg(), &corpus(8, 8, 0), &t, &aug()).unwrap();
        let init = Model::init(cfg(), init_seed(t.seed)).unwrap();
        assert_eq!(trained.model, init);
    }

    #[test]
    fn small_corpus_rejected() {
        let r = train_stage1(cfg(), &corpus(3, 8, 0), &small_train(1), &aug());
        assert!(matches!(r, Err(Error::InsufficientData { required: 4, available: 3 })));
    }

    #[test]
    fn all_frozen_step_keeps_encoder() {
        let data = corpus(8, 8, 1);
        let stage1 = train_stage1(cfg(), &data, &small_train(1), &aug()).unwrap();
        let before = stage1.model.clone();
        let trained = train_stage2(stage1.model, &data, &small_train(2), &aug(), FreezeSpec::All).unwrap();
        assert_eq!(trained.model.encoder.blocks, before.encoder.blocks);
        assert_eq!(trained.model.encoder.embed, before.encoder.embed);
        assert_ne!(trained.model.head, before.head);
        assert_eq!(trained.progress.epoch_losses.len(), 2);
    }

    #[test]
    fn prefix_freeze_keeps_prefix_only() {
        let data = corpus(8, 8, 2);
        let stage1 = train_stage1(cfg(), &data, &small_train(1), &aug()).unwrap();
        let before = stage1.model.clone();
        let trained = train_stage2(stage1.model, &data, &small_train(3), &aug(), FreezeSpec::Prefix(2)).unwrap();
        assert_eq!(trained.model.encoder.blocks[..2], before.encoder.blocks[..2]);
        assert_ne!(trained.model.encoder.blocks[2], before.encoder.blocks[2]);
        assert_ne!(trained.model.encoder.embed, before.encoder.embed);
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = corpus(8, 8, 3);
        let a = train_stage1(cfg(), &data, &small_train(2), &aug()).unwrap();
        let b = train_stage1(cfg(), &data, &small_train(2), &aug()).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn interrupted_run_resumes_bitwise() {
        let data = corpus(12, 8, 4);
        let t = small_train(2);
        let full = train_stage1(cfg(), &data, &t, &aug()).unwrap();
        let model = Model::init(cfg(), init_seed(t.seed)).unwrap();
        let mut part = Trainer::new(model, t, aug(), 1).unwrap();
        assert!(!part.run(&data, Some(4)).unwrap());
        assert_eq!(part.progress.global_step, 4);
        assert!(part.run(&data, None).unwrap());
        assert_eq!(part, full);
    }
}

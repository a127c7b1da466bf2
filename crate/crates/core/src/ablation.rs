//! Learning-path and sampling-method comparisons on the toy benchmark.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::probe::{compare_inits, summarize, ProbeConfig, ReportRow};
use crate::resampler::rebalance;
use crate::ssl::augment::raster_tensor;
use crate::ssl::model::Model;
use crate::ssl::tensor::Tensor;
use crate::ssl::train::{derive_seed, init_seed, train_stage1, train_stage2, FreezeSpec};
use crate::synth::{general_corpus, specialized_mosaic, toy_augment, toy_model_config, toy_train, Mosaic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub general_images: usize,
    /// Tiles per class in the balanced specialized corpus.
    pub specialized_per_class: usize,
    /// Tiles per class held out for probing.
    pub eval_per_class: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub shots: Vec<usize>,
    pub probe_seeds: Vec<u64>,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            general_images: 512,
            specialized_per_class: 32,
            eval_per_class: 40,
            stage1_epochs: 20,
            stage2_epochs: 20,
            shots: vec![5, 20],
            probe_seeds: (0..10).collect(),
            seed: 5,
        }
    }
}

/// Mean OA of one (init, shots) group.
pub fn mean_oa(rows: &[ReportRow], init: &str, shots: usize) -> Option<f64> {
    summarize(rows)
        .into_iter()
        .find(|(i, s, _, _)| i == init && *s == shots)
        .map(|(_, _, mean, _)| mean)
}

fn eval_set(cfg: &AblationConfig) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let eval = specialized_mosaic(cfg.eval_per_class, 32, derive_seed(&[cfg.seed, 3]))?;
    Ok((eval.tensors()?, eval.labels()))
}

/// Probes five initialisations: `random`, `stage1-only`, `specialized-only`
/// (random init trained on the specialized corpus), `two-stage-no-retention`
/// and `two-stage` (default frozen prefix).
pub fn learning_path(cfg: &AblationConfig, probe: &ProbeConfig) -> Result<Vec<ReportRow>> {
    let model_cfg = toy_model_config();
    let aug = toy_augment();
    let general = general_corpus(cfg.general_images, 32, derive_seed(&[cfg.seed, 1]));
    let specialized = specialized_mosaic(cfg.specialized_per_class, 32, derive_seed(&[cfg.seed, 2]))?.tensors()?;
    let t1 = toy_train(cfg.stage1_epochs, cfg.seed);
    let t2 = toy_train(cfg.stage2_epochs, cfg.seed);

    let stage1 = train_stage1(model_cfg.clone(), &general, &t1, &aug)?.model;
    let freeze = FreezeSpec::default_for(model_cfg.blocks());
    let two = train_stage2(stage1.clone(), &specialized, &t2, &aug, freeze)?.model;
    let two_plain = train_stage2(stage1.clone(), &specialized, &t2, &aug, FreezeSpec::None)?.model;
    let random = Model::init(model_cfg, init_seed(cfg.seed))?;
    let specialized_only = train_stage2(random.clone(), &specialized, &t2, &aug, FreezeSpec::None)?.model;

    let inits = [
        ("random", &random),
        ("stage1-only", &stage1),
        ("specialized-only", &specialized_only),
        ("two-stage-no-retention", &two_plain),
        ("two-stage", &two),
    ];
    let inits: Vec<(String, Option<&Model>)> = inits.iter().map(|(n, m)| (n.to_string(), Some(*m))).collect();
    let (images, labels) = eval_set(cfg)?;
    compare_inits(&inits, &images, &labels, &cfg.shots, &cfg.probe_seeds, probe)
}

/// Tiles per class of the deliberately imbalanced corpus: two dominant
/// classes per source kind, a long tail behind them.
pub const IMBALANCED_COUNTS: [usize; 8] = [160, 48, 32, 16, 160, 48, 32, 16];

/// Pretrains from one random init on an imbalanced mosaic and on its
/// rebalanced subset with the same number of optimizer steps, then probes
/// both (`imbalanced`, `rebalanced`). Each entry of `pretrain_seeds` is a
/// separate pretraining run; their rows are pooled.
pub fn sampling_method(cfg: &AblationConfig, pretrain_seeds: &[u64], probe: &ProbeConfig) -> Result<Vec<ReportRow>> {
    let mosaic = Mosaic::with_counts(&IMBALANCED_COUNTS, 32, 16, derive_seed(&[cfg.seed, 4]))?;
    let balanced = rebalance(&mosaic.manifest("toy", "imbalanced", cfg.seed), cfg.seed)?;
    let imbalanced_t = mosaic.tensors()?;
    let balanced_t = balanced
        .records
        .iter()
        .map(|r| raster_tensor(&mosaic.raster, &r.window))
        .collect::<Result<Vec<_>>>()?;

    let batch = toy_train(0, 0).batch_size;
    let (steps_imb, steps_bal) = (imbalanced_t.len() / batch, balanced_t.len() / batch);
    // Equal budgets need the step counts per epoch to divide evenly.
    if steps_bal == 0 || steps_imb % steps_bal != 0 {
        return Err(crate::error::Error::InvalidConfig(format!(
            "{steps_imb} and {steps_bal} steps per epoch do not divide evenly"
        )));
    }
    let ratio = steps_imb / steps_bal;
    let model_cfg = toy_model_config();
    let aug = toy_augment();
    let start = Model::init(model_cfg, init_seed(cfg.seed))?;
    let (images, labels) = eval_set(cfg)?;
    let mut rows = Vec::new();
    for &seed in pretrain_seeds {
        let imb = train_stage2(start.clone(), &imbalanced_t, &toy_train(cfg.stage2_epochs, seed), &aug, FreezeSpec::None)?;
        let bal = train_stage2(start.clone(), &balanced_t, &toy_train(cfg.stage2_epochs * ratio, seed), &aug, FreezeSpec::None)?;
        debug_assert_eq!(imb.progress.global_step, bal.progress.global_step);
        let inits = vec![
            ("imbalanced".to_string(), Some(&imb.model)),
            ("rebalanced".to_string(), Some(&bal.model)),
        ];
        rows.extend(compare_inits(&inits, &images, &labels, &cfg.shots, &cfg.probe_seeds, probe)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_oa_picks_group() {
        let row = |init: &str, oa| ReportRow {
            init: init.into(),
            shots: 5,
            seed: 0,
            oa,
        };
        let rows = vec![row("a", 0.5), row("a", 0.7), row("b", 0.1)];
        assert!((mean_oa(&rows, "a", 5).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(mean_oa(&rows, "a", 20), None);
    }
}

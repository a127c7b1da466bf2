//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{Grads, Model, ModelConfig};
use super::tensor::Tensor;
use super::train::loss_and_grads;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error. Below it the comparison is
    /// effectively absolute, since finite differences of a loss near 1 carry
    /// roughly 1e-10 of rounding noise.
    pub scale_floor: f64,
    pub tau: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-6,
            tolerance: 1e-5,
            scale_floor: 1e-4,
            tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every parameter's analytic gradient with a central difference.
/// `corrupt` may alter the analytic gradients before comparison.
pub fn gradcheck(
    model: &Model,
    views: &[Tensor],
    cfg: &GradcheckConfig,
    corrupt: Option<&dyn Fn(&mut Grads)>,
) -> Result<GradcheckReport> {
    if model.config.blocks() == 0 {
        return Err(Error::InvalidConfig("model has no blocks to check".into()));
    }
    let (_, mut grads) = loss_and_grads(model, views, cfg.tau)?;
    if let Some(f) = corrupt {
        f(&mut grads);
    }
    let names = model.config.param_names();
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let mut check = TensorCheck {
            name,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for k in 0..grads.tensors[ti].len() {
            let original = probe.params()[ti].data()[k];
            probe.params_mut()[ti].data_mut()[k] = original + cfg.eps;
            let plus = loss_only(&probe, views, cfg.tau)?;
            probe.params_mut()[ti].data_mut()[k] = original - cfg.eps;
            let minus = loss_only(&probe, views, cfg.tau)?;
            probe.params_mut()[ti].data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let analytic = grads.tensors[ti][k];
            let err = relative_error(analytic, numeric, cfg.scale_floor);
            if err > check.max_rel_err || k == 0 {
                check.max_rel_err = err;
                check.worst_index = k;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_err < cfg.tolerance;
        tensors.push(check);
    }
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradcheckReport {
        tensors,
        tolerance: cfg.tolerance,
        passed,
    })
}

fn loss_only(model: &Model, views: &[Tensor], tau: f64) -> Result<f64> {
    let z: Vec<f64> = views
        .iter()
        .map(|v| model.forward_view(v.data()).map(|c| c.z))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let z = Tensor::new(vec![views.len(), model.config.proj_dim], z)?;
    Ok(super::loss::nt_xent(&z, tau)?.0)
}

/// Smallest distance of any ReLU input from the kink at zero.
pub fn relu_margin(model: &Model, views: &[Tensor]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for v in views {
        let c = model.forward_view(v.data())?;
        for x in c.block_pre.iter().flatten().chain(&c.fc1_pre) {
            margin = margin.min(x.abs());
        }
    }
    Ok(margin)
}

/// A small random model with `blocks` conv blocks plus a random two-sample
/// batch (four views), redrawn until every ReLU input is at least `margin`
/// from zero so that finite differences never straddle a kink.
pub fn random_case(seed: u64, blocks: usize, margin: f64) -> Result<(Model, Vec<Tensor>)> {
    if blocks == 0 {
        return Err(Error::InvalidConfig("model has no blocks to check".into()));
    }
    let side = 1usize << blocks.max(3);
    let config = ModelConfig {
        in_channels: 3,
        channels: vec![3; blocks],
        embed_dim: 5,
        head_hidden: 6,
        proj_dim: 4,
        input_side: side,
        standardize_input: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let mut model = Model::init(config.clone(), rng.random())?;
        // Non-zero biases exercise the bias gradients.
        for (i, t) in model.params_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let views: Vec<Tensor> = (0..4)
            .map(|_| {
                let data = (0..3 * side * side).map(|_| rng.random::<f64>()).collect();
                Tensor::new(vec![3, side, side], data).expect("sized")
            })
            .collect();
        if relu_margin(&model, &views)? >= margin {
            return Ok((model, views));
        }
    }
    Err(Error::InvalidConfig(format!("no kink-free draw found for margin {margin}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_model_passes() {
        for blocks in 1..=3 {
            let (model, views) = random_case(blocks as u64, blocks, 1e-4).unwrap();
            let report = gradcheck(&model, &views, &GradcheckConfig::default(), None).unwrap();
            assert!(report.passed, "{:#?}", report);
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (model, views) = random_case(9, 2, 1e-4).unwrap();
        let corrupt = |g: &mut Grads| g.tensors[2][0] += 1e-2;
        let report = gradcheck(&model, &views, &GradcheckConfig::default(), Some(&corrupt)).unwrap();
        assert!(!report.passed);
        assert!(!report.tensors[2].passed);
        assert!(report.tensors[0].passed);
    }
}
